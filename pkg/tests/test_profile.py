"""Analytic size and compute accounting vs the constructed network."""

import pytest

from weedmtl.model import ModelConfig, build
from weedmtl.profile import count_macs, count_parameters, profile


def built_param_count(config):
    model = build(config, seed=0)
    return sum(p.data.size for p in model.parameters())


class TestParameterCounts:
    """The closed-form count must equal the instantiated model exactly."""

    @pytest.mark.parametrize("kw", [
        dict(size="tiny"),
        dict(size="tiny", use_se=False),
        dict(size="tiny", kernel_start=5, kernel_mid=3, kernel_end=5),
        dict(size="tiny", use_aux=False),
        dict(size="tiny", tasks=("seg",)),
        dict(size="tiny", tasks=("height",)),
        dict(size="tiny", tasks=("week",)),
        dict(size="tiny", tasks=("height", "week")),
        dict(size="tiny", agg_channels=64),
        dict(size="small", aux_hidden=32),
    ])
    def test_matches_built_model(self, kw):
        kw.setdefault("aux_hidden", 16)
        cfg = ModelConfig(**kw)
        assert sum(count_parameters(cfg).values()) == built_param_count(cfg)

    def test_medium_matches_built_model(self):
        cfg = ModelConfig(size="medium")
        assert sum(count_parameters(cfg).values()) == built_param_count(cfg)

    def test_aux_heads_add_parameters(self):
        with_aux = sum(count_parameters(ModelConfig(size="tiny", aux_hidden=16)).values())
        without = sum(count_parameters(
            ModelConfig(size="tiny", aux_hidden=16, use_aux=False)).values())
        assert with_aux > without

    def test_size_ordering(self):
        small = sum(count_parameters(ModelConfig(size="small")).values())
        medium = sum(count_parameters(ModelConfig(size="medium")).values())
        large = sum(count_parameters(ModelConfig(size="large")).values())
        assert small < medium < large


class TestMacCounts:
    def test_quadratic_in_resolution(self):
        cfg = ModelConfig(size="tiny", aux_hidden=16)
        m256 = sum(count_macs(cfg, (256, 256)).values())
        m512 = sum(count_macs(cfg, (512, 512)).values())
        # conv compute scales with area; attention adds a small superlinear term
        assert 3.9 < m512 / m256 < 4.2

    def test_aux_heads_free_at_inference(self):
        base = dict(size="tiny", aux_hidden=16)
        with_aux = count_macs(ModelConfig(**base), (256, 256))
        without = count_macs(ModelConfig(use_aux=False, **base), (256, 256))
        assert sum(with_aux.values()) == sum(without.values())

    def test_se_cost_is_small(self):
        on = sum(count_macs(ModelConfig(size="medium"), (512, 512)).values())
        off = sum(count_macs(ModelConfig(size="medium", use_se=False), (512, 512)).values())
        assert on > off
        assert (on - off) / on < 0.005

    def test_single_task_cheaper_than_full(self):
        full = sum(count_macs(ModelConfig(size="tiny", aux_hidden=16), (256, 256)).values())
        seg = sum(count_macs(ModelConfig(size="tiny", aux_hidden=16,
                                         tasks=("seg",)), (256, 256)).values())
        assert seg < full


class TestProfileReport:
    def test_report_consistency(self):
        rep = profile(ModelConfig(size="tiny", aux_hidden=16), (256, 256))
        assert rep.total_flops == 2 * rep.total_macs
        assert rep.total_params == sum(rep.params_by_module.values())
        d = rep.to_dict()
        assert d["total_params"] == rep.total_params
        assert d["convention"] == "2*MAC"
        assert set(d["flops_by_module"]) == set(rep.macs_by_module)

    def test_default_input_is_512(self):
        rep = profile(ModelConfig(size="tiny", aux_hidden=16))
        assert tuple(rep.input_hw) == (512, 512)

    def test_module_breakdown_covers_heads(self):
        rep = profile(ModelConfig(size="tiny", aux_hidden=16), (256, 256))
        for key in ("detail", "semantic", "aggregation", "seg_head",
                    "growth_decoder", "aux_heads"):
            assert key in rep.params_by_module, key
