"""Neural-network primitives on :class:`~weedmtl.tensor.Tensor`.

Each primitive implements its own backward pass; composite ops (squeeze-
excitation, attention) are built from the primitives so their gradients
follow from the chain rule automatically.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import ConfigError, DataError, DimensionError
from .tensor import Tensor

INV_SQRT2 = 0.7071067811865475244
INV_SQRT_2PI = 0.3989422804014326779


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out_data = np.where(mask, x.data, 0)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * mask)

    return Tensor.result(out_data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    # Split by sign so neither branch exponentiates a large positive value.
    d = x.data
    out_data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                        np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out_data = out_data.astype(d.dtype, copy=False)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * out_data * (1.0 - out_data))

    return Tensor.result(out_data, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-error-linear unit: x * Phi(x) with the true erf."""
    d = x.data
    phi = 0.5 * (1.0 + erf(d * INV_SQRT2))
    out_data = (d * phi).astype(d.dtype, copy=False)

    def backward(g):
        if x.requires_grad:
            pdf = INV_SQRT_2PI * np.exp(-0.5 * d * d)
            x.accumulate_grad(g * (phi + d * pdf).astype(d.dtype, copy=False))

    return Tensor.result(out_data, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            x.accumulate_grad(out_data * (g - dot))

    return Tensor.result(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# linear / convolution
# ---------------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x: [..., D_in], weight: [D_out, D_in], bias: [D_out]."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(
            f"linear: input feature axis {x.shape[-1]} != weight in-dim {weight.shape[1]}")
    out = x @ weight.transpose(1, 0)
    if bias is not None:
        out = out + bias
    return out


def _conv_geometry(h, w, kh, kw, stride, padding):
    hout = (h + 2 * padding - kh) // stride + 1
    wout = (w + 2 * padding - kw) // stride + 1
    if hout < 1 or wout < 1:
        raise DimensionError(
            f"conv2d: kernel ({kh}x{kw}) does not fit input ({h}x{w}) "
            f"with stride {stride}, padding {padding}")
    return hout, wout


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, hout: int, wout: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> (N, C, kh*kw, hout*wout) by strided slicing."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh * kw, hout * wout), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + stride * hout:stride, j:j + stride * wout:stride]
            cols[:, :, i * kw + j, :] = patch.reshape(n, c, hout * wout)
    return cols


def _col2im_add(dcols: np.ndarray, shape, kh, kw, stride, padding, hout, wout) -> np.ndarray:
    """Scatter-add (N, C, kh*kw, hout*wout) patches back onto the input grid."""
    n, c, h, w = shape
    dxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=dcols.dtype)
    dcols = dcols.reshape(n, c, kh, kw, hout, wout)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * hout:stride, j:j + stride * wout:stride] += dcols[:, :, i, j]
    if padding:
        return dxp[:, :, padding:-padding or None, padding:-padding or None]
    return dxp


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, *,
           stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding and channel groups.

    x: [N, C_in, H, W]; weight: [C_out, C_in/groups, kh, kw]; bias: [C_out].
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-D input/weight, got {x.shape}/{weight.shape}")
    n, cin, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    if cin % groups or cout % groups:
        raise DimensionError(f"conv2d: channels ({cin}->{cout}) not divisible by groups={groups}")
    if cin_g != cin // groups:
        raise DimensionError(
            f"conv2d: weight expects {cin_g} channels/group, input supplies {cin // groups}")
    hout, wout = _conv_geometry(h, w, kh, kw, stride, padding)
    l = hout * wout
    k = cin_g * kh * kw

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, stride, hout, wout)          # (N, Cin, khkw, L)
    cols = cols.reshape(n, groups, k, l)
    w2 = weight.data.reshape(groups, cout // groups, k)
    out_data = np.matmul(w2, cols).reshape(n, cout, hout, wout)
    if bias is not None:
        out_data += bias.data.reshape(1, cout, 1, 1)

    x_data = x.data  # backward rebuilds the patch matrix instead of storing it

    def backward(g):
        g2 = g.reshape(n, groups, cout // groups, l)
        if weight.requires_grad or x.requires_grad:
            if padding:
                xpb = np.pad(x_data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
            else:
                xpb = x_data
            cols_b = _im2col(xpb, kh, kw, stride, hout, wout).reshape(n, groups, k, l)
        if weight.requires_grad:
            dw = np.matmul(g2, cols_b.transpose(0, 1, 3, 2)).sum(axis=0)
            weight.accumulate_grad(dw.reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = np.matmul(w2.transpose(0, 2, 1), g2).reshape(n, cin, kh * kw, l)
            x.accumulate_grad(_col2im_add(dcols, (n, cin, h, w), kh, kw,
                                          stride, padding, hout, wout))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.result(out_data, parents, backward)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                 running_mean: np.ndarray, running_var: np.ndarray, *,
                 training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    Training mode normalizes by biased batch statistics and folds them into
    the running buffers in place: r <- (1 - momentum) * r + momentum * stat.
    Eval mode normalizes by the running buffers only.
    """
    if x.ndim != 4:
        raise DimensionError(f"batch_norm2d: expected [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm2d: affine shape {gamma.shape} != ({c},)")
    axes = (0, 2, 3)
    if training:
        m = n * h * w
        if m < 2:
            raise DimensionError(
                f"batch_norm2d: training needs N*H*W >= 2 per channel, got {m}")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out_data = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)
    out_data = out_data.astype(x.data.dtype, copy=False)

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=axes))
        if x.requires_grad:
            gxh = g * gamma.data.reshape(1, c, 1, 1)
            if training:
                m = n * h * w
                s1 = gxh.sum(axis=axes, keepdims=True)
                s2 = (gxh * xhat).sum(axis=axes, keepdims=True)
                dx = (gxh - s1 / m - xhat * s2 / m) * inv_std.reshape(1, c, 1, 1)
            else:
                dx = gxh * inv_std.reshape(1, c, 1, 1)
            x.accumulate_grad(dx.astype(x.data.dtype, copy=False))

    return Tensor.result(out_data, (x, gamma, beta), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, *, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: affine shape {gamma.shape} != ({d},)")
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    out_data = (gamma.data * xhat + beta.data).astype(x.data.dtype, copy=False)

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta.accumulate_grad(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gxh = g * gamma.data
            s1 = gxh.mean(axis=-1, keepdims=True)
            s2 = (gxh * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad(((gxh - s1 - xhat * s2) * inv_std).astype(x.data.dtype, copy=False))

    return Tensor.result(out_data, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def pixel_shuffle(x: Tensor, upscale: int) -> Tensor:
    """[N, C*r^2, H, W] -> [N, C, H*r, W*r].

    out[n, c, h*r + i, w*r + j] == in[n, c*r*r + i*r + j, h, w].
    """
    n, c_in, h, w = x.shape
    r = upscale
    if c_in % (r * r):
        raise DimensionError(f"pixel_shuffle: channel axis {c_in} not divisible by {r * r}")
    c = c_in // (r * r)
    out_data = (x.data.reshape(n, c, r, r, h, w)
                .transpose(0, 1, 4, 2, 5, 3)
                .reshape(n, c, h * r, w * r))

    def backward(g):
        if x.requires_grad:
            gi = (g.reshape(n, c, h, r, w, r)
                  .transpose(0, 1, 3, 5, 2, 4)
                  .reshape(n, c_in, h, w))
            x.accumulate_grad(np.ascontiguousarray(gi))

    return Tensor.result(np.ascontiguousarray(out_data), (x,), backward)


def pixel_unshuffle(x: Tensor, downscale: int) -> Tensor:
    """[N, C, H*r, W*r] -> [N, C*r^2, H, W]; inverse of :func:`pixel_shuffle`."""
    n, c, hr, wr = x.shape
    r = downscale
    if hr % r or wr % r:
        raise DimensionError(f"pixel_unshuffle: spatial axes {hr}x{wr} not divisible by {r}")
    h, w = hr // r, wr // r
    out_data = (x.data.reshape(n, c, h, r, w, r)
                .transpose(0, 1, 3, 5, 2, 4)
                .reshape(n, c * r * r, h, w))

    def backward(g):
        if x.requires_grad:
            gi = (g.reshape(n, c, r, r, h, w)
                  .transpose(0, 1, 4, 2, 5, 3)
                  .reshape(n, c, hr, wr))
            x.accumulate_grad(np.ascontiguousarray(gi))

    return Tensor.result(np.ascontiguousarray(out_data), (x,), backward)


def upsample_nearest(x: Tensor, scale: int) -> Tensor:
    """Integer-factor nearest-neighbour upsampling of [N, C, H, W]."""
    n, c, h, w = x.shape
    out_data = np.repeat(np.repeat(x.data, scale, axis=2), scale, axis=3)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g.reshape(n, c, h, scale, w, scale).sum(axis=(3, 5)))

    return Tensor.result(out_data, (x,), backward)


def adaptive_avg_pool2d(x: Tensor, out_hw: tuple[int, int]) -> Tensor:
    """Average pooling to a fixed output grid with evenly split windows."""
    n, c, h, w = x.shape
    oh, ow = out_hw
    if oh < 1 or ow < 1 or oh > h or ow > w:
        raise DimensionError(f"adaptive_avg_pool2d: cannot pool {h}x{w} to {oh}x{ow}")
    if (oh, ow) == (1, 1):
        out_data = x.data.mean(axis=(2, 3), keepdims=True)

        def backward(g):
            if x.requires_grad:
                x.accumulate_grad(np.broadcast_to(g / (h * w), x.shape)
                                  .astype(x.data.dtype, copy=False))

        return Tensor.result(out_data, (x,), backward)

    hs = [(i * h) // oh for i in range(oh)] + [h]
    ws = [(j * w) // ow for j in range(ow)] + [w]
    # Window edges follow floor(i*H/oh) .. ceil((i+1)*H/oh).
    he = [-(-((i + 1) * h) // oh) for i in range(oh)]
    we = [-(-((j + 1) * w) // ow) for j in range(ow)]
    out_data = np.empty((n, c, oh, ow), dtype=x.data.dtype)
    for i in range(oh):
        for j in range(ow):
            out_data[:, :, i, j] = x.data[:, :, hs[i]:he[i], ws[j]:we[j]].mean(axis=(2, 3))

    def backward(g):
        if not x.requires_grad:
            return
        dx = np.zeros_like(x.data)
        for i in range(oh):
            for j in range(ow):
                area = (he[i] - hs[i]) * (we[j] - ws[j])
                dx[:, :, hs[i]:he[i], ws[j]:we[j]] += g[:, :, i:i + 1, j:j + 1] / area
        x.accumulate_grad(dx)

    return Tensor.result(out_data, (x,), backward)


def max_pool2d(x: Tensor, kernel: int, stride: int, padding: int = 0) -> Tensor:
    """Max pooling; padded cells hold -inf so they never win the max."""
    n, c, h, w = x.shape
    hout, wout = _conv_geometry(h, w, kernel, kernel, stride, padding)
    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                    constant_values=-np.inf)
    else:
        xp = x.data
    patches = _im2col(xp, kernel, kernel, stride, hout, wout)   # (N, C, k*k, L)
    arg = patches.argmax(axis=2)
    out_data = np.take_along_axis(patches, arg[:, :, None, :], axis=2)[:, :, 0, :]
    out_data = out_data.reshape(n, c, hout, wout)

    def backward(g):
        if not x.requires_grad:
            return
        dpatches = np.zeros((n, c, kernel * kernel, hout * wout), dtype=g.dtype)
        np.put_along_axis(dpatches, arg[:, :, None, :], g.reshape(n, c, 1, -1), axis=2)
        x.accumulate_grad(_col2im_add(dpatches, (n, c, h, w), kernel, kernel,
                                      stride, padding, hout, wout))

    return Tensor.result(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# regularization
# ---------------------------------------------------------------------------

def dropout(x: Tensor, p: float, *, training: bool, seed: int | None = None) -> Tensor:
    """Inverted dropout; identical seeds give bitwise-identical masks."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout: p must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if seed is None:
        raise ConfigError("dropout: training mode requires an explicit seed")
    rng = np.random.default_rng(seed)
    keep = (rng.random(x.shape) >= p)
    scale = np.array(1.0 / (1.0 - p), dtype=x.data.dtype)
    mask = keep.astype(x.data.dtype) * scale
    out_data = x.data * mask

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * mask)

    return Tensor.result(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# composite blocks
# ---------------------------------------------------------------------------

def se_block(x: Tensor, w_reduce: Tensor, w_expand: Tensor) -> Tensor:
    """Squeeze-excitation: scale channels by sigmoid(W2 relu(W1 gap(x))).

    x: [N, C, H, W]; w_reduce: [C_hidden, C]; w_expand: [C, C_hidden].
    """
    n, c = x.shape[:2]
    if w_reduce.shape[1] != c or w_expand.shape[0] != c or \
            w_reduce.shape[0] != w_expand.shape[1]:
        raise DimensionError(
            f"se_block: weights {w_reduce.shape}/{w_expand.shape} do not match C={c}")
    pooled = adaptive_avg_pool2d(x, (1, 1)).reshape(n, c)
    gate = sigmoid(linear(relu(linear(pooled, w_reduce)), w_expand))
    return x * gate.reshape(n, c, 1, 1)


def multi_head_attention(x: Tensor, num_heads: int,
                         wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor,
                         bq: Tensor | None = None, bk: Tensor | None = None,
                         bv: Tensor | None = None, bo: Tensor | None = None) -> Tensor:
    """Scaled dot-product attention over tokens. x: [N, T, D]."""
    n, t, d = x.shape
    if d % num_heads:
        raise DimensionError(f"multi_head_attention: D={d} not divisible by heads={num_heads}")
    dh = d // num_heads

    def split(z):
        return z.reshape(n, t, num_heads, dh).transpose(0, 2, 1, 3)   # (N, h, T, Dh)

    q = split(linear(x, wq, bq))
    k = split(linear(x, wk, bk))
    v = split(linear(x, wv, bv))
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    attn = softmax(scores, axis=-1)
    ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(n, t, d)
    return linear(ctx, wo, bo)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def softmax_cross_entropy(logits: Tensor, labels: np.ndarray,
                          class_weights: np.ndarray | None = None) -> Tensor:
    """Mean softmax cross-entropy, optionally weighted per class.

    logits: [N, C] with labels [N], or [N, C, H, W] with labels [N, H, W].
    With weights w the mean is sum(w[y_i] * nll_i) / sum(w[y_i]), so uniform
    weights reduce to the plain mean.
    """
    if logits.ndim == 4:
        n, c, h, w = logits.shape
        if labels.shape != (n, h, w):
            raise DimensionError(
                f"cross_entropy: labels {labels.shape} do not match logits {logits.shape}")
        flat = logits.transpose(0, 2, 3, 1).reshape(n * h * w, c)
    elif logits.ndim == 2:
        n, c = logits.shape
        if labels.shape != (n,):
            raise DimensionError(
                f"cross_entropy: labels {labels.shape} do not match logits {logits.shape}")
        flat = logits
    else:
        raise DimensionError(f"cross_entropy: logits must be 2-D or 4-D, got {logits.shape}")

    y = labels.reshape(-1)
    if y.min() < 0 or y.max() >= c:
        bad = int(np.argmax((y < 0) | (y >= c)))
        raise DataError(f"cross_entropy: label {int(y[bad])} at flat index {bad} "
                        f"outside [0, {c})")
    x = flat.data
    m = x.shape[0]
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + x.max(axis=1)
    nll = lse - x[np.arange(m), y]
    if class_weights is None:
        wsum = float(m)
        wvec = None
        loss = nll.sum() / wsum
    else:
        class_weights = np.asarray(class_weights, dtype=x.dtype)
        if class_weights.shape != (c,):
            raise DimensionError(
                f"cross_entropy: class_weights shape {class_weights.shape} != ({c},)")
        wvec = class_weights[y]
        wsum = float(wvec.sum())
        if wsum <= 0:
            raise ConfigError("cross_entropy: class weights sum to zero over this batch")
        loss = float((wvec * nll).sum()) / wsum
    out_data = np.asarray(loss, dtype=x.dtype)

    def backward(g):
        if not flat.requires_grad:
            return
        p = np.exp(x - lse[:, None])
        p[np.arange(m), y] -= 1.0
        if wvec is not None:
            p *= wvec[:, None]
        flat.accumulate_grad((float(g) / wsum) * p)

    return Tensor.result(out_data, (flat,), backward)
