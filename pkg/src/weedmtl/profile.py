"""Analytic parameter and compute accounting.

Counts are derived from the configuration alone (no tensors are built) and
must match the constructed model exactly; the test suite asserts equality
across the full ablation grid.

Compute is tallied as multiply-accumulate operations of convolutions,
linear layers and attention matmuls (normalizations, activations and
pooling are excluded). Reports carry both the raw MAC count and FLOPs
under the calibrated 2 * MAC convention, which is the convention that
reproduces the published per-model figures.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .encoder import AuxHeads
from .model import ModelConfig

FLOP_CONVENTION = "2*MAC"
FLOPS_PER_MAC = 2


# -- parameter helpers --------------------------------------------------------

def _conv_p(cin: int, cout: int, k: int, groups: int = 1, bias: bool = False) -> int:
    return cout * (cin // groups) * k * k + (cout if bias else 0)


def _bn_p(c: int) -> int:
    return 2 * c


def _convbn_p(cin: int, cout: int, k: int, groups: int = 1) -> int:
    return _conv_p(cin, cout, k, groups) + _bn_p(cout)


def _linear_p(din: int, dout: int, bias: bool = True) -> int:
    return din * dout + (dout if bias else 0)


def _se_p(c: int) -> int:
    hidden = int(round(c * 0.25))
    return 2 * hidden * c


def _uib_p(cin: int, cout: int, spec) -> int:
    exp = cin * spec.expand_ratio
    total = 0
    if spec.kernel_start:
        total += _convbn_p(cin, cin, spec.kernel_start, groups=cin)
    total += _convbn_p(cin, exp, 1)
    if spec.kernel_mid:
        total += _convbn_p(exp, exp, spec.kernel_mid, groups=exp)
    if spec.use_se:
        total += _se_p(exp)
    if spec.kernel_end:
        total += _convbn_p(exp, exp, spec.kernel_end, groups=exp)
    total += _convbn_p(exp, cout, 1)
    total += cout                       # layer scale
    return total


def _stage_p(cin: int, cout: int, depth: int, spec) -> int:
    return _uib_p(cin, cout, spec) + (depth - 1) * _uib_p(cout, cout, spec)


def count_parameters(config: ModelConfig) -> dict[str, int]:
    """Exact per-module parameter counts for a configuration."""
    config = config.validate()
    spec = config.branch_spec()
    uib = config.uib_spec()
    agg = config.resolved_agg_channels()
    d1, d2, d3 = spec.detail_channels
    s_stem, s3, s4, s5 = spec.semantic_channels
    b3, b4, b5 = spec.blocks_per_stage
    out: dict[str, int] = {}

    out["detail"] = (_convbn_p(3, d1, 3) + _convbn_p(d1, d1, 3)
                     + _convbn_p(d1, d2, 3) + 2 * _convbn_p(d2, d2, 3)
                     + _convbn_p(d2, d3, 3) + 2 * _convbn_p(d3, d3, 3))

    stem = (_convbn_p(3, s_stem, 3) + _convbn_p(s_stem, max(s_stem // 2, 1), 1)
            + _convbn_p(max(s_stem // 2, 1), s_stem, 3)
            + _convbn_p(2 * s_stem, s_stem, 3))
    context = _bn_p(s5) + _convbn_p(s5, s5, 1) + _convbn_p(s5, s5, 3)
    out["semantic"] = (stem + _stage_p(s_stem, s3, b3, uib)
                       + _stage_p(s3, s4, b4, uib) + _stage_p(s4, s5, b5, uib)
                       + context)

    out["aggregation"] = (_convbn_p(d3, d3, 3, groups=d3) + _conv_p(d3, agg, 1)
                          + _convbn_p(s5, agg, 3) + _convbn_p(agg, agg, 3))

    if "seg" in config.tasks:
        up = 8
        out["seg_head"] = (_convbn_p(agg, spec.seg_mid_channels, 3)
                           + _conv_p(spec.seg_mid_channels,
                                     config.num_classes * up * up, 1, bias=True))
        if config.use_aux:
            aux = 0
            for c, f in zip(spec.semantic_channels, AuxHeads.FACTORS):
                aux += _convbn_p(c, config.aux_hidden, 3)
                aux += _conv_p(config.aux_hidden, config.num_classes * f * f, 1, bias=True)
            out["aux_heads"] = aux

    if "height" in config.tasks or "week" in config.tasks:
        e = spec.embed_dim
        t1, t2 = spec.trunk_dims
        g = (_linear_p(agg, e)
             + 4 * _linear_p(e, e)              # attention projections
             + 2 * 2 * e                        # two layer norms
             + _linear_p(e, 4 * e) + _linear_p(4 * e, e)
             + _linear_p(e, t1) + _linear_p(t1, t2) + 2 * t2)
        if "height" in config.tasks:
            g += _linear_p(t2, 1)
        if "week" in config.tasks:
            g += _linear_p(t2, config.num_weeks)
        out["growth_decoder"] = g

    return out


# -- compute helpers -----------------------------------------------------------

def _conv_m(cin, cout, k, h, w, groups=1) -> int:
    return cout * (cin // groups) * k * k * h * w


def _uib_m(cin, cout, spec, h_in, w_in, stride) -> int:
    exp = cin * spec.expand_ratio
    h_out, w_out = h_in // stride, w_in // stride
    total = 0
    if spec.kernel_start:
        total += _conv_m(cin, cin, spec.kernel_start, h_in, w_in, groups=cin)
    total += _conv_m(cin, exp, 1, h_in, w_in)
    if spec.kernel_mid:
        total += _conv_m(exp, exp, spec.kernel_mid, h_out, w_out, groups=exp)
    if spec.use_se:
        total += 2 * int(round(exp * 0.25)) * exp
    if spec.kernel_end:
        total += _conv_m(exp, exp, spec.kernel_end, h_out, w_out, groups=exp)
    total += _conv_m(exp, cout, 1, h_out, w_out)
    return total


def _stage_m(cin, cout, depth, spec, h_in, w_in) -> int:
    total = _uib_m(cin, cout, spec, h_in, w_in, 2)
    h, w = h_in // 2, w_in // 2
    total += (depth - 1) * _uib_m(cout, cout, spec, h, w, 1)
    return total


def count_macs(config: ModelConfig, input_hw: tuple[int, int] = (512, 512)) -> dict[str, int]:
    """Per-module multiply-accumulates of one inference forward (batch 1).

    Auxiliary heads never run at inference, so they contribute nothing.
    """
    config = config.validate()
    h, w = input_hw
    if h % 32 or w % 32:
        raise ValueError(f"input {h}x{w} must be divisible by 32")
    spec = config.branch_spec()
    uib = config.uib_spec()
    agg = config.resolved_agg_channels()
    d1, d2, d3 = spec.detail_channels
    s_stem, s3, s4, s5 = spec.semantic_channels
    b3, b4, b5 = spec.blocks_per_stage
    out: dict[str, int] = {}

    h2, w2 = h // 2, w // 2
    h4, w4 = h // 4, w // 4
    h8, w8 = h // 8, w // 8
    h16, w16 = h // 16, w // 16
    h32, w32 = h // 32, w // 32

    out["detail"] = (_conv_m(3, d1, 3, h2, w2) + _conv_m(d1, d1, 3, h2, w2)
                     + _conv_m(d1, d2, 3, h4, w4) + 2 * _conv_m(d2, d2, 3, h4, w4)
                     + _conv_m(d2, d3, 3, h8, w8) + 2 * _conv_m(d3, d3, 3, h8, w8))

    stem = (_conv_m(3, s_stem, 3, h2, w2)
            + _conv_m(s_stem, max(s_stem // 2, 1), 1, h2, w2)
            + _conv_m(max(s_stem // 2, 1), s_stem, 3, h4, w4)
            + _conv_m(2 * s_stem, s_stem, 3, h4, w4))
    context = _conv_m(s5, s5, 1, 1, 1) + _conv_m(s5, s5, 3, h32, w32)
    out["semantic"] = (stem + _stage_m(s_stem, s3, b3, uib, h4, w4)
                       + _stage_m(s3, s4, b4, uib, h8, w8)
                       + _stage_m(s4, s5, b5, uib, h16, w16)
                       + context)

    out["aggregation"] = (_conv_m(d3, d3, 3, h8, w8, groups=d3) + _conv_m(d3, agg, 1, h8, w8)
                          + _conv_m(s5, agg, 3, h32, w32) + _conv_m(agg, agg, 3, h8, w8))

    if "seg" in config.tasks:
        out["seg_head"] = (_conv_m(agg, spec.seg_mid_channels, 3, h8, w8)
                           + _conv_m(spec.seg_mid_channels, config.num_classes * 64, 1, h8, w8))

    if "height" in config.tasks or "week" in config.tasks:
        e = spec.embed_dim
        t1, t2 = spec.trunk_dims
        g = agg * e + 4 * e * e + 2 * e       # projection, attention, score/context matmuls
        g += e * 4 * e + 4 * e * e            # feed-forward
        g += e * t1 + t1 * t2
        if "height" in config.tasks:
            g += t2
        if "week" in config.tasks:
            g += t2 * config.num_weeks
        out["growth_decoder"] = g

    return out


@dataclass
class ProfileReport:
    """JSON-serializable summary of one configuration's size and compute."""
    config: dict
    input_hw: tuple[int, int]
    params_by_module: dict[str, int]
    macs_by_module: dict[str, int]
    convention: str = FLOP_CONVENTION
    notes: str = ("aux heads train only: counted in params, excluded from compute; "
                  "compute covers conv/linear/matmul MACs")

    @property
    def total_params(self) -> int:
        return sum(self.params_by_module.values())

    @property
    def total_macs(self) -> int:
        return sum(self.macs_by_module.values())

    @property
    def total_flops(self) -> int:
        return FLOPS_PER_MAC * self.total_macs

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "input_hw": list(self.input_hw),
            "total_params": self.total_params,
            "total_macs": self.total_macs,
            "total_flops": self.total_flops,
            "convention": self.convention,
            "params_by_module": self.params_by_module,
            "flops_by_module": {k: FLOPS_PER_MAC * v for k, v in self.macs_by_module.items()},
            "notes": self.notes,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def profile(config: ModelConfig | None = None,
            input_hw: tuple[int, int] = (512, 512)) -> ProfileReport:
    config = (config or ModelConfig()).validate()
    return ProfileReport(
        config=config.to_dict(),
        input_hw=input_hw,
        params_by_module=count_parameters(config),
        macs_by_module=count_macs(config, input_hw),
    )
