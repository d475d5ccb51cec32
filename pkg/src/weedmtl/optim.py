"""Adam with decoupled weight decay, plus the warmup-cosine schedule.

Decay is applied directly to the weights before the moment update,
p <- p * (1 - lr * wd), so it never enters the moment estimates. The
schedule ramps linearly from base_lr * warmup_init to base_lr over the
warmup, then follows a cosine from base_lr down to min_lr; both pieces
equal base_lr at the junction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .modules import Parameter


@dataclass(frozen=True)
class ScheduleSpec:
    base_lr: float = 2e-4
    warmup_iters: int = 1500
    total_iters: int = 100000
    min_lr: float = 0.0
    warmup_start_factor: float = 0.1  # fraction of base_lr at iteration 0

    def validate(self) -> None:
        if self.total_iters <= 0:
            raise ConfigError(f"total_iters must be positive, got {self.total_iters}")
        if self.warmup_iters < 0 or self.warmup_iters > self.total_iters:
            raise ConfigError(
                f"warmup_iters {self.warmup_iters} outside [0, {self.total_iters}]")
        if self.base_lr <= 0.0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if self.min_lr < 0.0 or self.min_lr > self.base_lr:
            raise ConfigError(f"min_lr {self.min_lr} outside [0, base_lr]")
        if not 0.0 <= self.warmup_start_factor <= 1.0:
            raise ConfigError(
                f"warmup_start_factor {self.warmup_start_factor} outside [0, 1]")


def lr_at(spec: ScheduleSpec, iteration: int) -> float:
    """Learning rate for a 0-based iteration index."""
    spec.validate()
    it = min(max(int(iteration), 0), spec.total_iters)
    if it < spec.warmup_iters:
        frac = it / spec.warmup_iters
        start = spec.warmup_start_factor
        return spec.base_lr * (start + (1.0 - start) * frac)
    span = spec.total_iters - spec.warmup_iters
    if span == 0:
        return spec.min_lr
    t = (it - spec.warmup_iters) / span
    return spec.min_lr + 0.5 * (spec.base_lr - spec.min_lr) * (1.0 + math.cos(math.pi * t))


class Adam:
    """Adam with bias correction and decoupled weight decay.

    Moments are kept in the parameter dtype; decay applies to every
    parameter uniformly (there is no gamma/bias exemption list).
    """

    def __init__(self, params: list[Parameter], *, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 1e-4):
        if not params:
            raise ConfigError("Adam needs at least one parameter")
        self.params = list(params)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        # validate before touching anything so a bad step leaves no partial update
        for p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise DataError(f"non-finite gradient in parameter "
                                f"{p.name or '<unnamed>'}; step aborted")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay != 0.0:
                p.data *= np.asarray(1.0 - lr * self.weight_decay, dtype=p.data.dtype)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= np.asarray(lr, dtype=p.data.dtype) * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moment buffers keyed by parameter name, for checkpointing."""
        state: dict[str, np.ndarray] = {}
        for p, m, v in zip(self.params, self.m, self.v):
            if p.name is None:
                raise ConfigError("cannot checkpoint an optimizer over unnamed parameters")
            state[f"adam_m.{p.name}"] = m
            state[f"adam_v.{p.name}"] = v
        return state

    def load_state_arrays(self, state: dict[str, np.ndarray], t: int) -> None:
        self.t = int(t)
        for p, m, v in zip(self.params, self.m, self.v):
            m[...] = state[f"adam_m.{p.name}"]
            v[...] = state[f"adam_v.{p.name}"]
