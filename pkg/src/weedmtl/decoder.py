"""Task decoders over the aggregated 1/8-resolution features.

The segmentation head restores full resolution with a single 8x pixel
shuffle. The growth decoder pools the features to one token, refines it
with a transformer block, and emits plant height (raw regression value)
and growth-week logits from a shared trunk.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .modules import (ConvBNAct, Conv2d, Dropout, LayerNorm, Linear, Module,
                      MultiHeadAttention)
from .tensor import Tensor


class SegHead(Module):
    """conv3x3 -> dropout -> 1x1 to classes * upscale^2 -> pixel shuffle."""

    def __init__(self, rng, in_ch: int, mid_ch: int, num_classes: int, *,
                 upscale: int = 8, dropout_p: float = 0.1, dtype=np.float32):
        super().__init__()
        self.upscale = upscale
        self.num_classes = num_classes
        self.conv = ConvBNAct(rng, in_ch, mid_ch, 3, dtype=dtype)
        self.dropout = Dropout(dropout_p)
        self.classify = Conv2d(rng, mid_ch, num_classes * upscale * upscale, 1,
                               bias=True, dtype=dtype)

    def forward(self, x: Tensor, seed: int | None = None) -> Tensor:
        y = self.dropout(self.conv(x), seed=seed)
        return ops.pixel_shuffle(self.classify(y), self.upscale)


class GrowthDecoder(Module):
    """Single-token transformer decoder for height and growth week.

    Global average pooling makes the token permutation invariant over
    spatial positions, so the block's attention acts purely as a learned
    feature refinement (softmax over one token is exactly 1).
    """

    def __init__(self, rng, in_ch: int, embed_dim: int, num_heads: int,
                 trunk_dims: tuple[int, int], num_weeks: int, *,
                 predict_height: bool = True, predict_week: bool = True,
                 dtype=np.float32):
        super().__init__()
        d1, d2 = trunk_dims
        self.embed_dim = embed_dim
        self.project = Linear(rng, in_ch, embed_dim, dtype=dtype)
        self.attn = MultiHeadAttention(rng, embed_dim, num_heads, dtype=dtype)
        self.ln_attn = LayerNorm(embed_dim, dtype=dtype)
        self.ffn_in = Linear(rng, embed_dim, 4 * embed_dim, dtype=dtype)
        self.ffn_out = Linear(rng, 4 * embed_dim, embed_dim, dtype=dtype)
        self.ln_ffn = LayerNorm(embed_dim, dtype=dtype)
        self.trunk_in = Linear(rng, embed_dim, d1, dtype=dtype)
        self.trunk_out = Linear(rng, d1, d2, dtype=dtype)
        self.trunk_norm = LayerNorm(d2, dtype=dtype)
        self.head_height = Linear(rng, d2, 1, dtype=dtype) if predict_height else None
        self.head_week = Linear(rng, d2, num_weeks, dtype=dtype) if predict_week else None

    def forward(self, x: Tensor) -> tuple[Tensor | None, Tensor | None]:
        n, c = x.shape[:2]
        token = ops.adaptive_avg_pool2d(x, (1, 1)).reshape(n, 1, c)
        token = self.project(token)
        token = self.ln_attn(token + self.attn(token))
        token = self.ln_ffn(token + self.ffn_out(ops.gelu(self.ffn_in(token))))
        feat = ops.relu(self.trunk_norm(self.trunk_out(self.trunk_in(token))))
        feat = feat.reshape(n, -1)
        height = self.head_height(feat) if self.head_height is not None else None
        week = self.head_week(feat) if self.head_week is not None else None
        return height, week
