"""Finite-difference verification of analytic gradients.

Every check runs in float64 with central differences (default h = 1e-5) and
reports the worst relative error, where the relative error of a coordinate
is |analytic - numeric| / max(1, |analytic|, |numeric|).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import Tensor, concat

DEFAULT_H = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance

    def __str__(self):
        status = "ok" if self.passed else "FAIL"
        return f"{self.name:<28s} max_rel_err={self.max_rel_err:.3e}  [{status}]"


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float((np.abs(a - b) / denom).max()) if a.size else 0.0


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], *,
                    h: float = DEFAULT_H, name: str = "fn",
                    tolerance: float = 1e-4) -> CheckResult:
    """Compare analytic and central-difference gradients of sum(fn * R).

    ``fn`` maps float64 tensors to a tensor; a fixed random projection R
    turns it into a scalar objective so the whole Jacobian is exercised.
    """
    inputs = [np.asarray(a, dtype=np.float64) for a in inputs]

    def objective(arrays) -> tuple[float, list[np.ndarray] | None]:
        tensors = [Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
        out = fn(*tensors)
        rng = np.random.default_rng(7)
        proj = Tensor(rng.standard_normal(out.shape), dtype=np.float64)
        loss = (out * proj).sum()
        return loss, tensors

    loss, tensors = objective(inputs)
    loss.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    worst = 0.0
    for which in range(len(inputs)):
        numeric = np.zeros_like(inputs[which])
        flat = inputs[which].reshape(-1)
        num_flat = numeric.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            lp, _ = objective(inputs)
            flat[idx] = orig - h
            lm, _ = objective(inputs)
            flat[idx] = orig
            num_flat[idx] = (lp.item() - lm.item()) / (2.0 * h)
        worst = max(worst, _rel_err(analytic[which], numeric))
    return CheckResult(name, worst, tolerance)


def _stateless_bn(training: bool):
    def fn(x, gamma, beta):
        rm = np.zeros(x.shape[1])
        rv = np.ones(x.shape[1])
        if not training:
            rng = np.random.default_rng(3)
            rm = rng.standard_normal(x.shape[1]) * 0.1
            rv = 1.0 + 0.5 * rng.random(x.shape[1])
        return ops.batch_norm2d(x, gamma, beta, rm, rv, training=training)
    return fn


def primitive_checks(h: float = DEFAULT_H) -> list[CheckResult]:
    """Finite-difference checks for every differentiable primitive."""
    rng = np.random.default_rng(42)

    def rand(*shape):
        return rng.standard_normal(shape)

    def rand_away_from_zero(*shape):
        # Keeps samples off the ReLU kink where FD is one-sided.
        a = rng.standard_normal(shape)
        return a + np.sign(a) * 0.2

    results = []

    def run(name, fn, inputs):
        results.append(check_gradients(fn, inputs, h=h, name=name))

    run("add", lambda a, b: a + b, [rand(3, 4), rand(3, 4)])
    run("add_broadcast", lambda a, b: a + b, [rand(3, 4), rand(4)])
    run("mul", lambda a, b: a * b, [rand(3, 4), rand(3, 4)])
    run("div", lambda a, b: a / b, [rand(3, 4), rand_away_from_zero(3, 4)])
    run("pow2", lambda a: a ** 2, [rand(3, 4)])
    run("exp", lambda a: a.exp(), [rand(3, 4)])
    run("log", lambda a: a.log(), [np.abs(rand(3, 4)) + 0.5])
    run("sqrt", lambda a: a.sqrt(), [np.abs(rand(3, 4)) + 0.5])
    run("matmul", lambda a, b: a @ b, [rand(3, 4), rand(4, 5)])
    run("matmul_batched", lambda a, b: a @ b, [rand(2, 3, 4), rand(2, 4, 5)])
    run("sum_axis", lambda a: a.sum(axis=1), [rand(3, 4)])
    run("mean", lambda a: a.mean(), [rand(3, 4)])
    run("reshape", lambda a: a.reshape(6, 2), [rand(3, 4)])
    run("transpose", lambda a: a.transpose(1, 0), [rand(3, 4)])
    run("concat", lambda a, b: concat([a, b], axis=1), [rand(2, 3), rand(2, 2)])

    run("relu", ops.relu, [rand_away_from_zero(3, 4)])
    run("sigmoid", ops.sigmoid, [rand(3, 4)])
    run("gelu", ops.gelu, [rand(3, 4)])
    run("softmax", lambda a: ops.softmax(a, axis=-1), [rand(3, 5)])
    run("linear", ops.linear, [rand(3, 4), rand(5, 4), rand(5)])

    run("conv2d_k3", lambda x, w, b: ops.conv2d(x, w, b, stride=1, padding=1),
        [rand(2, 3, 5, 5), rand(4, 3, 3, 3), rand(4)])
    run("conv2d_stride2", lambda x, w: ops.conv2d(x, w, stride=2, padding=1),
        [rand(2, 3, 6, 6), rand(4, 3, 3, 3)])
    run("conv2d_depthwise", lambda x, w: ops.conv2d(x, w, stride=1, padding=2, groups=4),
        [rand(2, 4, 5, 5), rand(4, 1, 5, 5)])
    run("conv2d_grouped", lambda x, w: ops.conv2d(x, w, groups=2),
        [rand(2, 4, 4, 4), rand(6, 2, 3, 3)])

    run("batch_norm_train", _stateless_bn(True), [rand(2, 3, 4, 4), rand(3), rand(3)])
    run("batch_norm_eval", _stateless_bn(False), [rand(2, 3, 4, 4), rand(3), rand(3)])
    run("layer_norm", lambda x, g, b: ops.layer_norm(x, g, b), [rand(4, 6), rand(6), rand(6)])

    run("pixel_shuffle", lambda x: ops.pixel_shuffle(x, 2), [rand(2, 8, 3, 3)])
    run("pixel_unshuffle", lambda x: ops.pixel_unshuffle(x, 2), [rand(2, 2, 6, 6)])
    run("upsample_nearest", lambda x: ops.upsample_nearest(x, 2), [rand(2, 3, 4, 4)])
    run("adaptive_pool_global", lambda x: ops.adaptive_avg_pool2d(x, (1, 1)),
        [rand(2, 3, 5, 5)])
    run("adaptive_pool_uneven", lambda x: ops.adaptive_avg_pool2d(x, (2, 3)),
        [rand(2, 3, 5, 7)])
    run("max_pool", lambda x: ops.max_pool2d(x, 3, 2, 1), [rand(2, 3, 6, 6)])
    run("dropout", lambda x: ops.dropout(x, 0.4, training=True, seed=11), [rand(3, 4, 2, 2)])

    run("se_block", ops.se_block, [rand(2, 8, 4, 4), rand(2, 8), rand(8, 2)])
    run("multi_head_attention",
        lambda x, wq, wk, wv, wo: ops.multi_head_attention(x, 2, wq, wk, wv, wo),
        [rand(2, 3, 8), rand(8, 8), rand(8, 8), rand(8, 8), rand(8, 8)])

    labels = np.array([0, 2, 1])
    weights = np.array([1.0, 2.0, 0.5])
    run("cross_entropy", lambda z: ops.softmax_cross_entropy(z, labels), [rand(3, 3)])
    run("cross_entropy_weighted",
        lambda z: ops.softmax_cross_entropy(z, labels, weights), [rand(3, 3)])
    labels2d = np.array([[[0, 1], [2, 0]]])
    run("cross_entropy_spatial",
        lambda z: ops.softmax_cross_entropy(z, labels2d), [rand(1, 3, 2, 2)])

    return results


# ---------------------------------------------------------------------------
# whole-model check

def tiny_model_config():
    """Medium layout with every channel width divided by 8."""
    from .model import ModelConfig
    return ModelConfig(size="tiny", aux_hidden=104)


def model_check(*, h: float = 3e-8, tolerance: float = 1e-3,
                extra_directions: int = 2, seed: int = 0) -> list[CheckResult]:
    """Directional finite differences through the multi-task loss.

    Builds the tiny float64 model in training mode on a 64x64 batch so the
    objective crosses every layer, including batch-stat normalization,
    dropout (fixed seed) and the auxiliary heads. One random unit direction
    is checked per top-level module plus ``extra_directions`` over the full
    parameter vector.

    The step is much smaller than for the primitive checks: stride-2
    bottleneck blocks emit layer-scaled (~1e-5) features whose batch
    statistics the next normalization inverts, so the loss has curvature
    ~1/sigma^3 along those weights and h=1e-5 sits far outside the linear
    regime (the secant only converges to the analytic slope as h shrinks).
    """
    from .losses import LossTargets, multi_task_loss
    from .model import build
    from .tensor import Tensor

    rng = np.random.default_rng(seed)
    model = build(tiny_model_config(), seed=seed, dtype=np.float64)
    model.train()
    x = rng.standard_normal((2, 3, 64, 64))
    targets = LossTargets(
        mask=rng.integers(0, 17, size=(2, 64, 64)),
        height_cm=rng.uniform(5.0, 40.0, size=2),
        week=rng.integers(0, 11, size=2))

    def loss_value() -> Tensor:
        out = model(Tensor(x, dtype=np.float64), seed=17)
        loss, _ = multi_task_loss(out, targets)
        return loss

    named = list(model.named_parameters())
    params = [p for _, p in named]
    sizes = [p.size for p in params]
    total = sum(sizes)

    def add_flat(vec: np.ndarray) -> None:
        off = 0
        for p, size in zip(params, sizes):
            p.data += vec[off:off + size].reshape(p.shape)
            off += size

    for p in params:
        p.grad = None
    loss_value().backward()
    grad = np.concatenate([
        (p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1)
        for p in params])

    # one direction inside each top-level module, then full-vector ones
    directions = []
    offsets = np.cumsum([0] + sizes)
    groups: dict[str, list[tuple[int, int]]] = {}
    for (name, _), lo, hi in zip(named, offsets[:-1], offsets[1:]):
        groups.setdefault(name.split(".")[0], []).append((int(lo), int(hi)))
    for module in sorted(groups):
        d = np.zeros(total)
        for lo, hi in groups[module]:
            d[lo:hi] = rng.standard_normal(hi - lo)
        directions.append((f"model_dir_{module}", d / np.linalg.norm(d)))
    for k in range(extra_directions):
        d = rng.standard_normal(total)
        directions.append((f"model_dir_full{k}", d / np.linalg.norm(d)))

    saved = [p.data.copy() for p in params]
    results = []
    for name, d in directions:
        analytic = float(grad @ d)
        add_flat(h * d)
        plus = loss_value().item()
        add_flat(-2.0 * h * d)
        minus = loss_value().item()
        for p, keep in zip(params, saved):
            p.data = keep.copy()
        numeric = (plus - minus) / (2.0 * h)
        err = _rel_err(np.asarray(analytic), np.asarray(numeric))
        results.append(CheckResult(name, err, tolerance))
    return results
