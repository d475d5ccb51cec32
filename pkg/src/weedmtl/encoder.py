"""Dual-path encoder.

A shallow, wide detail branch preserves spatial precision down to 1/8
resolution while a deep semantic branch of inverted-bottleneck blocks
reaches 1/32 resolution; a bilateral aggregation layer fuses the two with
sigmoid cross-gating. Auxiliary segmentation heads hang off the semantic
stages during training only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError
from .modules import (BatchNorm2d, Conv2d, ConvBNAct, Module, ModuleList,
                      Sequential, SqueezeExcite)
from .tensor import Parameter, Tensor, concat

VALID_KERNELS = (0, 1, 3, 5)


@dataclass(frozen=True)
class UIBSpec:
    """Universal inverted-bottleneck block layout.

    Kernel size 0 skips that depthwise convolution entirely.
    """
    kernel_start: int = 0
    kernel_mid: int = 3
    kernel_end: int = 0
    expand_ratio: int = 6
    use_se: bool = True
    layer_scale_init: float = 1e-5

    def validate(self) -> None:
        for field in ("kernel_start", "kernel_mid", "kernel_end"):
            k = getattr(self, field)
            if k not in VALID_KERNELS:
                raise ConfigError(f"UIBSpec.{field} must be one of {VALID_KERNELS}, got {k}")
        if self.expand_ratio < 1:
            raise ConfigError(f"UIBSpec.expand_ratio must be >= 1, got {self.expand_ratio}")


@dataclass(frozen=True)
class BranchSpec:
    """Per-size channel widths and depths for both encoder branches."""
    detail_channels: tuple[int, int, int]
    semantic_channels: tuple[int, int, int, int]    # stem, stage3, stage4, stage5
    blocks_per_stage: tuple[int, int, int]
    expand_ratio: int
    embed_dim: int
    num_heads: int
    trunk_dims: tuple[int, int]
    seg_mid_channels: int


class DetailBranch(Module):
    """Three conv stages (2, 3, 3 layers) striding to 1/8 resolution."""

    def __init__(self, rng, in_ch: int, channels: tuple[int, int, int], dtype=np.float32):
        super().__init__()
        c1, c2, c3 = channels
        self.stage1 = Sequential([
            ConvBNAct(rng, in_ch, c1, 3, stride=2, dtype=dtype),
            ConvBNAct(rng, c1, c1, 3, dtype=dtype),
        ])
        self.stage2 = Sequential([
            ConvBNAct(rng, c1, c2, 3, stride=2, dtype=dtype),
            ConvBNAct(rng, c2, c2, 3, dtype=dtype),
            ConvBNAct(rng, c2, c2, 3, dtype=dtype),
        ])
        self.stage3 = Sequential([
            ConvBNAct(rng, c2, c3, 3, stride=2, dtype=dtype),
            ConvBNAct(rng, c3, c3, 3, dtype=dtype),
            ConvBNAct(rng, c3, c3, 3, dtype=dtype),
        ])

    def forward(self, x: Tensor) -> Tensor:
        return self.stage3(self.stage2(self.stage1(x)))


class StemBlock(Module):
    """Entry block of the semantic branch; output sits at 1/4 resolution."""

    def __init__(self, rng, in_ch: int, out_ch: int, dtype=np.float32):
        super().__init__()
        self.conv = ConvBNAct(rng, in_ch, out_ch, 3, stride=2, dtype=dtype)
        self.left = Sequential([
            ConvBNAct(rng, out_ch, max(out_ch // 2, 1), 1, dtype=dtype),
            ConvBNAct(rng, max(out_ch // 2, 1), out_ch, 3, stride=2, dtype=dtype),
        ])
        self.fuse = ConvBNAct(rng, out_ch * 2, out_ch, 3, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = self.conv(x)
        left = self.left(x)
        right = ops.max_pool2d(x, 3, 2, 1)
        return self.fuse(concat([left, right], axis=1))


class UIBBlock(Module):
    """Inverted bottleneck with optional start/mid/end depthwise convs.

    Projection output is scaled per channel (layer scale) and a residual is
    added only when the block keeps resolution and width.
    """

    def __init__(self, rng, in_ch: int, out_ch: int, stride: int, spec: UIBSpec,
                 dtype=np.float32):
        super().__init__()
        spec.validate()
        if stride != 1 and spec.kernel_mid == 0:
            raise ConfigError(
                f"UIBBlock: stride {stride} requires a mid depthwise conv (kernel_mid > 0)")
        exp = in_ch * spec.expand_ratio
        self.start = (ConvBNAct(rng, in_ch, in_ch, spec.kernel_start, groups=in_ch,
                                act=False, dtype=dtype)
                      if spec.kernel_start else None)
        self.expand = ConvBNAct(rng, in_ch, exp, 1, dtype=dtype)
        self.mid = (ConvBNAct(rng, exp, exp, spec.kernel_mid, stride=stride, groups=exp,
                              dtype=dtype)
                    if spec.kernel_mid else None)
        self.se = SqueezeExcite(rng, exp, dtype=dtype) if spec.use_se else None
        self.end = (ConvBNAct(rng, exp, exp, spec.kernel_end, groups=exp, act=False,
                              dtype=dtype)
                    if spec.kernel_end else None)
        self.project = ConvBNAct(rng, exp, out_ch, 1, act=False, dtype=dtype)
        self.layer_scale = Parameter(
            np.full(out_ch, spec.layer_scale_init, dtype=dtype))
        self.use_residual = stride == 1 and in_ch == out_ch

    def forward(self, x: Tensor) -> Tensor:
        y = self.start(x) if self.start is not None else x
        y = self.expand(y)
        if self.mid is not None:
            y = self.mid(y)
        if self.se is not None:
            y = self.se(y)
        if self.end is not None:
            y = self.end(y)
        y = self.project(y)
        y = y * self.layer_scale.reshape(1, -1, 1, 1)
        return y + x if self.use_residual else y


class ContextEmbedding(Module):
    """Global-context injection at the end of the semantic branch."""

    def __init__(self, rng, channels: int, dtype=np.float32):
        super().__init__()
        self.bn = BatchNorm2d(channels, dtype=dtype)
        self.point = ConvBNAct(rng, channels, channels, 1, dtype=dtype)
        self.out = ConvBNAct(rng, channels, channels, 3, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        g = ops.adaptive_avg_pool2d(x, (1, 1))
        g = self.point(self.bn(g))
        return self.out(x + g)


class SemanticBranch(Module):
    """Stem + three UIB stages + context embedding; outputs at 1/32."""

    def __init__(self, rng, in_ch: int, channels: tuple[int, int, int, int],
                 blocks: tuple[int, int, int], uib: UIBSpec, dtype=np.float32):
        super().__init__()
        stem_ch, c3, c4, c5 = channels
        self.stem = StemBlock(rng, in_ch, stem_ch, dtype=dtype)
        self.stage3 = self._make_stage(rng, stem_ch, c3, blocks[0], uib, dtype)
        self.stage4 = self._make_stage(rng, c3, c4, blocks[1], uib, dtype)
        self.stage5 = self._make_stage(rng, c4, c5, blocks[2], uib, dtype)
        self.context = ContextEmbedding(rng, c5, dtype=dtype)

    @staticmethod
    def _make_stage(rng, in_ch, out_ch, depth, uib, dtype) -> Sequential:
        if depth < 1:
            raise ConfigError(f"semantic stage needs at least one block, got {depth}")
        mods = [UIBBlock(rng, in_ch, out_ch, 2, uib, dtype=dtype)]
        mods.extend(UIBBlock(rng, out_ch, out_ch, 1, uib, dtype=dtype)
                    for _ in range(depth - 1))
        return Sequential(mods)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor, Tensor]:
        """Returns (stem, stage3, stage4, stage5, context) features."""
        f_stem = self.stem(x)
        f3 = self.stage3(f_stem)
        f4 = self.stage4(f3)
        f5 = self.stage5(f4)
        return f_stem, f3, f4, f5, self.context(f5)


class BilateralAggregation(Module):
    """Sigmoid cross-gated fusion of detail (1/8) and semantic (1/32) paths."""

    def __init__(self, rng, detail_ch: int, semantic_ch: int, out_ch: int,
                 dtype=np.float32):
        super().__init__()
        self.detail_dw = ConvBNAct(rng, detail_ch, detail_ch, 3, groups=detail_ch,
                                   act=False, dtype=dtype)
        self.detail_pw = Conv2d(rng, detail_ch, out_ch, 1, bias=False, dtype=dtype)
        self.semantic_conv = ConvBNAct(rng, semantic_ch, out_ch, 3, act=False, dtype=dtype)
        self.fuse = ConvBNAct(rng, out_ch, out_ch, 3, dtype=dtype)

    def forward(self, detail: Tensor, semantic: Tensor) -> Tensor:
        d = self.detail_pw(self.detail_dw(detail))
        s = ops.upsample_nearest(self.semantic_conv(semantic), 4)
        crossed = d * ops.sigmoid(s) + s * ops.sigmoid(d)
        return self.fuse(crossed)


class AuxSegHead(Module):
    """Training-only segmentation head with stage-specific pixel shuffle."""

    def __init__(self, rng, in_ch: int, hidden: int, num_classes: int, factor: int,
                 dtype=np.float32):
        super().__init__()
        self.factor = factor
        self.conv = ConvBNAct(rng, in_ch, hidden, 3, dtype=dtype)
        self.classify = Conv2d(rng, hidden, num_classes * factor * factor, 1,
                               bias=True, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ops.pixel_shuffle(self.classify(self.conv(x)), self.factor)


class AuxHeads(Module):
    """Four heads over the semantic stages, upsampling 4/8/16/32 times."""

    FACTORS = (4, 8, 16, 32)

    def __init__(self, rng, stage_channels: tuple[int, int, int, int], hidden: int,
                 num_classes: int, dtype=np.float32):
        super().__init__()
        self.heads = ModuleList([
            AuxSegHead(rng, c, hidden, num_classes, f, dtype=dtype)
            for c, f in zip(stage_channels, self.FACTORS)
        ])

    def forward(self, feats: tuple[Tensor, Tensor, Tensor, Tensor]) -> list[Tensor]:
        return [head(f) for head, f in zip(self.heads, feats)]
