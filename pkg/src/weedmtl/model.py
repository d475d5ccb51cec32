"""Model assembly: configuration, construction, and the forward contract.

``build`` wires the dual-path encoder, bilateral aggregation and the task
decoders from a :class:`ModelConfig`; every parameter is drawn from one
seeded generator so identical (config, seed) pairs produce bitwise-equal
models.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

import numpy as np

from .decoder import GrowthDecoder, SegHead
from .encoder import (AuxHeads, BilateralAggregation, BranchSpec, DetailBranch,
                      SemanticBranch, UIBSpec)
from .errors import ConfigError, DimensionError
from .modules import Module, stamp_parameter_names
from .tensor import Tensor

TASKS = ("seg", "height", "week")

SIZE_SPECS: dict[str, BranchSpec] = {
    "small": BranchSpec(
        detail_channels=(32, 32, 64),
        semantic_channels=(8, 16, 32, 64),
        blocks_per_stage=(1, 1, 2),
        expand_ratio=4,
        embed_dim=256,
        num_heads=4,
        trunk_dims=(512, 256),
        seg_mid_channels=32,
    ),
    "medium": BranchSpec(
        detail_channels=(64, 64, 128),
        semantic_channels=(16, 32, 64, 128),
        blocks_per_stage=(2, 2, 4),
        expand_ratio=6,
        embed_dim=512,
        num_heads=8,
        trunk_dims=(1024, 512),
        seg_mid_channels=128,
    ),
    "large": BranchSpec(
        detail_channels=(96, 96, 192),
        semantic_channels=(24, 48, 96, 192),
        blocks_per_stage=(3, 3, 6),
        expand_ratio=6,
        embed_dim=768,
        num_heads=12,
        trunk_dims=(1536, 768),
        seg_mid_channels=192,
    ),
    # medium with every channel width divided by 8; only used by the
    # finite-difference harness, where full widths would be wasteful
    "tiny": BranchSpec(
        detail_channels=(8, 8, 16),
        semantic_channels=(2, 4, 8, 16),
        blocks_per_stage=(2, 2, 4),
        expand_ratio=6,
        embed_dim=64,
        num_heads=8,
        trunk_dims=(128, 64),
        seg_mid_channels=16,
    ),
}

AGG_CHANNEL_CHOICES = (64, 128, 256)

# Hidden width shared by the four auxiliary heads. Their pre-shuffle 1x1
# convolutions dominate the training-time parameter budget.
AUX_HIDDEN = 832

KERNEL_PATTERN = re.compile(r"^s([0135])m([0135])e([0135])$")


def parse_kernel_config(text: str) -> tuple[int, int, int]:
    """Parse 's1m3e0'-style kernel triples (start, mid, end)."""
    m = KERNEL_PATTERN.match(text.strip().lower())
    if not m:
        raise ConfigError(
            f"kernel config must match sXmYeZ with X,Y,Z in {{0,1,3,5}}, got {text!r}")
    return tuple(int(g) for g in m.groups())


@dataclass(frozen=True)
class ModelConfig:
    """Architecture switches; defaults give the headline medium model."""
    size: str = "medium"
    kernel_start: int = 0
    kernel_mid: int = 3
    kernel_end: int = 0
    use_se: bool = True
    agg_channels: int | None = None     # None -> the size variant's native width
    use_aux: bool = True
    tasks: tuple[str, ...] = TASKS
    num_classes: int = 17
    num_weeks: int = 11
    seg_dropout: float = 0.1
    aux_hidden: int = AUX_HIDDEN

    def validate(self) -> "ModelConfig":
        if self.size not in SIZE_SPECS:
            raise ConfigError(f"size must be one of {sorted(SIZE_SPECS)}, got {self.size!r}")
        if self.agg_channels is not None and self.agg_channels not in AGG_CHANNEL_CHOICES:
            raise ConfigError(
                f"agg_channels must be one of {AGG_CHANNEL_CHOICES}, got {self.agg_channels}")
        if not self.tasks:
            raise ConfigError("at least one task is required")
        for t in self.tasks:
            if t not in TASKS:
                raise ConfigError(f"unknown task {t!r}; choose from {TASKS}")
        if len(set(self.tasks)) != len(self.tasks):
            raise ConfigError(f"duplicate task in {self.tasks}")
        if self.num_classes < 2 or self.num_weeks < 2:
            raise ConfigError("num_classes and num_weeks must both be >= 2")
        if self.aux_hidden <= 0:
            raise ConfigError(f"aux_hidden must be positive, got {self.aux_hidden}")
        uib = self.uib_spec()
        uib.validate()
        return self

    def branch_spec(self) -> BranchSpec:
        return SIZE_SPECS[self.size]

    def uib_spec(self) -> UIBSpec:
        return UIBSpec(kernel_start=self.kernel_start, kernel_mid=self.kernel_mid,
                       kernel_end=self.kernel_end,
                       expand_ratio=self.branch_spec().expand_ratio,
                       use_se=self.use_se)

    def resolved_agg_channels(self) -> int:
        if self.agg_channels is not None:
            return self.agg_channels
        return self.branch_spec().detail_channels[2]

    def kernel_name(self) -> str:
        return f"s{self.kernel_start}m{self.kernel_mid}e{self.kernel_end}"

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "kernel": self.kernel_name(),
            "use_se": self.use_se,
            "agg_channels": self.agg_channels,
            "use_aux": self.use_aux,
            "tasks": list(self.tasks),
            "num_classes": self.num_classes,
            "num_weeks": self.num_weeks,
            "seg_dropout": self.seg_dropout,
            "aux_hidden": self.aux_hidden,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        kernel = parse_kernel_config(d.get("kernel", "s0m3e0"))
        return ModelConfig(
            size=d.get("size", "medium"),
            kernel_start=kernel[0], kernel_mid=kernel[1], kernel_end=kernel[2],
            use_se=bool(d.get("use_se", True)),
            agg_channels=d.get("agg_channels"),
            use_aux=bool(d.get("use_aux", True)),
            tasks=tuple(d.get("tasks", TASKS)),
            num_classes=int(d.get("num_classes", 17)),
            num_weeks=int(d.get("num_weeks", 11)),
            seg_dropout=float(d.get("seg_dropout", 0.1)),
            aux_hidden=int(d.get("aux_hidden", AUX_HIDDEN)),
        ).validate()


@dataclass
class ForwardOutput:
    """Task outputs; entries for disabled tasks are None.

    seg_logits: [N, num_classes, H, W]
    height:     [N, 1] (raw regression value, centimetres)
    week_logits:[N, num_weeks]
    aux_seg_logits: four full-resolution logit maps, training mode only.
    """
    seg_logits: Tensor | None = None
    height: Tensor | None = None
    week_logits: Tensor | None = None
    aux_seg_logits: list[Tensor] | None = None


class MultiTaskNet(Module):
    """Dual-path encoder with segmentation and growth decoders."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        super().__init__()
        config = config.validate()
        self.config = config
        self.dtype = dtype
        spec = config.branch_spec()
        uib = config.uib_spec()
        agg_ch = config.resolved_agg_channels()
        rng = np.random.default_rng(seed)

        self.detail = DetailBranch(rng, 3, spec.detail_channels, dtype=dtype)
        self.semantic = SemanticBranch(rng, 3, spec.semantic_channels,
                                       spec.blocks_per_stage, uib, dtype=dtype)
        self.aggregation = BilateralAggregation(
            rng, spec.detail_channels[2], spec.semantic_channels[3], agg_ch, dtype=dtype)

        self.seg_head = None
        self.aux_heads = None
        if "seg" in config.tasks:
            self.seg_head = SegHead(rng, agg_ch, spec.seg_mid_channels,
                                    config.num_classes, dropout_p=config.seg_dropout,
                                    dtype=dtype)
            if config.use_aux:
                self.aux_heads = AuxHeads(rng, spec.semantic_channels,
                                          config.aux_hidden, config.num_classes,
                                          dtype=dtype)

        self.growth = None
        if "height" in config.tasks or "week" in config.tasks:
            self.growth = GrowthDecoder(
                rng, agg_ch, spec.embed_dim, spec.num_heads, spec.trunk_dims,
                config.num_weeks,
                predict_height="height" in config.tasks,
                predict_week="week" in config.tasks,
                dtype=dtype)

        stamp_parameter_names(self)

    def forward(self, x: Tensor, *, seed: int | None = None,
                capture: dict | None = None) -> ForwardOutput:
        """Run all enabled tasks. Input H and W must be divisible by 32.

        ``seed`` feeds the segmentation-head dropout in training mode.
        ``capture``, when given, receives the aggregated feature map under
        the key "aggregated" (used by Grad-CAM).
        """
        if x.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(f"forward: expected [N,3,H,W], got {x.shape}")
        if x.shape[2] % 32 or x.shape[3] % 32:
            raise DimensionError(
                f"forward: spatial size {x.shape[2]}x{x.shape[3]} not divisible by 32")

        detail = self.detail(x)
        f_stem, f3, f4, f5, sem = self.semantic(x)
        agg = self.aggregation(detail, sem)
        if capture is not None:
            capture["aggregated"] = agg

        out = ForwardOutput()
        if self.seg_head is not None:
            out.seg_logits = self.seg_head(agg, seed=seed)
            if self.aux_heads is not None and self.training:
                out.aux_seg_logits = self.aux_heads((f_stem, f3, f4, f5))
        if self.growth is not None:
            out.height, out.week_logits = self.growth(agg)
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameters and buffers as one flat name -> array mapping."""
        state = {f"param.{n}": p.data for n, p in self.named_parameters()}
        state.update({f"buffer.{n}": b for n, b in self.named_buffers()})
        return state

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            key = f"param.{name}"
            if key not in state:
                raise ConfigError(f"checkpoint missing parameter {name}")
            if state[key].shape != p.data.shape:
                raise DimensionError(
                    f"checkpoint parameter {name}: shape {state[key].shape} != {p.data.shape}")
            p.data = state[key].astype(p.data.dtype, copy=True)
        for name, b in self.named_buffers():
            key = f"buffer.{name}"
            if key not in state:
                raise ConfigError(f"checkpoint missing buffer {name}")
            b[...] = state[key]


def build(config: ModelConfig | None = None, seed: int = 0,
          dtype=np.float32) -> MultiTaskNet:
    """Construct a model; identical (config, seed) gives bitwise-equal weights."""
    return MultiTaskNet(config or ModelConfig(), seed=seed, dtype=dtype)


def build_single_task(config: ModelConfig, task: str, seed: int = 0,
                      dtype=np.float32) -> MultiTaskNet:
    """Single-task variant sharing the full encoder.

    The segmentation variant keeps its auxiliary heads; height and week
    variants carry the growth decoder with just their own output head.
    """
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; choose from {TASKS}")
    return build(replace(config, tasks=(task,)), seed=seed, dtype=dtype)
