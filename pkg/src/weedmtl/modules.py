"""Parameter-holding layers built on the functional primitives.

Modules register parameters, buffers and submodules through attribute
assignment, so ``named_parameters`` walks the tree in a stable construction
order. Every layer draws its initial values from an explicit
``numpy.random.Generator``; two builds fed the same seed are bitwise equal.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .errors import ConfigError, DimensionError
from .tensor import Parameter, Tensor


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Base class with parameter / buffer / submodule bookkeeping."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield (f"{prefix}{name}", p)
        for name, m in self._modules.items():
            yield from m.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield (f"{prefix}{name}", b)
        for name, m in self._modules.items():
            yield from m.named_buffers(f"{prefix}{name}.")

    def train(self, flag: bool = True):
        object.__setattr__(self, "training", flag)
        for m in self._modules.values():
            m.train(flag)
        return self

    def eval(self):
        return self.train(False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError


class ModuleList(Module):
    """An indexable sequence of submodules."""

    def __init__(self, mods=()):
        super().__init__()
        self._items: list[Module] = []
        for m in mods:
            self.append(m)

    def append(self, mod: Module):
        self._modules[str(len(self._items))] = mod
        self._items.append(mod)
        return self

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, idx: int) -> Module:
        return self._items[idx]


class Sequential(ModuleList):
    def forward(self, x: Tensor) -> Tensor:
        for m in self._items:
            x = m(x)
        return x


class Identity(Module):
    def forward(self, x: Tensor) -> Tensor:
        return x


class Conv2d(Module):
    def __init__(self, rng, in_ch: int, out_ch: int, kernel: int, *,
                 stride: int = 1, padding: int | None = None, groups: int = 1,
                 bias: bool = False, dtype=np.float32):
        super().__init__()
        if padding is None:
            padding = kernel // 2
        self.stride = stride
        self.padding = padding
        self.groups = groups
        fan_in = (in_ch // groups) * kernel * kernel
        self.weight = Parameter(
            kaiming_uniform(rng, (out_ch, in_ch // groups, kernel, kernel), fan_in, dtype))
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride,
                          padding=self.padding, groups=self.groups)


class BatchNorm2d(Module):
    def __init__(self, channels: int, *, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm2d(x, self.gamma, self.beta,
                                self.running_mean, self.running_var,
                                training=self.training, momentum=self.momentum,
                                eps=self.eps)


class LayerNorm(Module):
    def __init__(self, dim: int, *, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(dim, dtype=dtype))
        self.beta = Parameter(np.zeros(dim, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class Linear(Module):
    def __init__(self, rng, in_dim: int, out_dim: int, *, bias: bool = True,
                 dtype=np.float32):
        super().__init__()
        self.weight = Parameter(kaiming_uniform(rng, (out_dim, in_dim), in_dim, dtype))
        self.bias = Parameter(np.zeros(out_dim, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Dropout(Module):
    """Dropout whose mask seed is supplied per call for reproducibility."""

    def __init__(self, p: float):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"Dropout: p must lie in [0, 1), got {p}")
        self.p = p

    def forward(self, x: Tensor, seed: int | None = None) -> Tensor:
        return ops.dropout(x, self.p, training=self.training, seed=seed)


class ConvBNAct(Module):
    """Convolution + batch norm + optional ReLU, the encoder workhorse."""

    def __init__(self, rng, in_ch: int, out_ch: int, kernel: int, *,
                 stride: int = 1, groups: int = 1, act: bool = True,
                 dtype=np.float32):
        super().__init__()
        self.conv = Conv2d(rng, in_ch, out_ch, kernel, stride=stride,
                           groups=groups, bias=False, dtype=dtype)
        self.bn = BatchNorm2d(out_ch, dtype=dtype)
        self.act = act

    def forward(self, x: Tensor) -> Tensor:
        x = self.bn(self.conv(x))
        return ops.relu(x) if self.act else x


class SqueezeExcite(Module):
    """Channel gating with a reduction bottleneck (hidden = C * ratio)."""

    def __init__(self, rng, channels: int, *, ratio: float = 0.25, dtype=np.float32):
        super().__init__()
        hidden = int(round(channels * ratio))
        if hidden < 1:
            raise ConfigError(f"SqueezeExcite: ratio {ratio} collapses {channels} channels")
        self.w_reduce = Parameter(kaiming_uniform(rng, (hidden, channels), channels, dtype))
        self.w_expand = Parameter(kaiming_uniform(rng, (channels, hidden), hidden, dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.se_block(x, self.w_reduce, self.w_expand)


class MultiHeadAttention(Module):
    """Self-attention projections with Xavier-uniform initialization."""

    def __init__(self, rng, dim: int, num_heads: int, dtype=np.float32):
        super().__init__()
        if dim % num_heads:
            raise DimensionError(f"MultiHeadAttention: dim {dim} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        for name in ("wq", "wk", "wv", "wo"):
            setattr(self, name, Parameter(xavier_uniform(rng, (dim, dim), dim, dim, dtype)))
        for name in ("bq", "bk", "bv", "bo"):
            setattr(self, name, Parameter(np.zeros(dim, dtype=dtype)))

    def forward(self, x: Tensor) -> Tensor:
        return ops.multi_head_attention(x, self.num_heads, self.wq, self.wk, self.wv,
                                        self.wo, self.bq, self.bk, self.bv, self.bo)


def stamp_parameter_names(model: Module, prefix: str = "") -> None:
    """Write the tree path onto every parameter; called once after build."""
    for name, p in model.named_parameters(prefix):
        p.name = name
