"""Full network assembly: config rules, output contracts, state handling."""

import numpy as np
import pytest

from weedmtl.errors import ConfigError, DimensionError
from weedmtl.model import (ModelConfig, build, build_single_task,
                           parse_kernel_config)
from weedmtl.tensor import Tensor


def tiny_config(**kw):
    base = dict(size="tiny", aux_hidden=16)
    base.update(kw)
    return ModelConfig(**base)


def batch(n=1, hw=64, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal((n, 3, hw, hw)).astype(np.float32))


class TestModelConfig:
    def test_defaults_validate(self):
        cfg = ModelConfig().validate()
        assert cfg.size == "medium" and cfg.num_classes == 17 and cfg.num_weeks == 11

    def test_unknown_size_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(size="huge").validate()

    def test_bad_kernel_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(kernel_mid=4).validate()

    def test_unknown_task_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(tasks=("seg", "depth")).validate()

    def test_duplicate_task_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(tasks=("seg", "seg")).validate()

    def test_empty_tasks_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(tasks=()).validate()

    def test_roundtrip_through_dict(self):
        cfg = ModelConfig(size="small", kernel_start=5, kernel_mid=3, kernel_end=5,
                          use_se=False, agg_channels=64, use_aux=False,
                          tasks=("seg", "week"), seg_dropout=0.2, aux_hidden=100)
        back = ModelConfig.from_dict(cfg.to_dict())
        assert back == cfg

    def test_parse_kernel_config(self):
        assert parse_kernel_config("s0m3e0") == (0, 3, 0)
        assert parse_kernel_config("s5m3e5") == (5, 3, 5)
        with pytest.raises(ConfigError):
            parse_kernel_config("m3e0")
        with pytest.raises(ConfigError):
            parse_kernel_config("s0m4e0")

    def test_agg_channels_resolution(self):
        assert ModelConfig(agg_channels=64).resolved_agg_channels() == 64
        native = ModelConfig(size="medium").resolved_agg_channels()
        assert native == ModelConfig(size="medium").branch_spec().detail_channels[2]


class TestForwardContract:
    def test_output_shapes(self):
        model = build(tiny_config(), seed=0).eval()
        out = model(batch(n=2, hw=64))
        assert out.seg_logits.shape == (2, 17, 64, 64)
        assert out.height.shape == (2, 1)
        assert out.week_logits.shape == (2, 11)
        assert out.aux_seg_logits is None     # eval mode: deep supervision off

    def test_train_mode_adds_four_aux_maps(self):
        model = build(tiny_config(), seed=0)
        out = model(batch(n=2, hw=64), seed=3)
        assert out.aux_seg_logits is not None and len(out.aux_seg_logits) == 4
        for a in out.aux_seg_logits:
            assert a.shape == (2, 17, 64, 64)

    def test_no_aux_config_never_emits_aux(self):
        model = build(tiny_config(use_aux=False), seed=0)
        out = model(batch(n=2, hw=64), seed=3)
        assert out.aux_seg_logits is None

    def test_disabled_tasks_are_none(self):
        model = build(tiny_config(tasks=("height",)), seed=0).eval()
        out = model(batch(hw=64))
        assert out.seg_logits is None and out.week_logits is None
        assert out.height.shape == (1, 1)

    def test_input_must_be_multiple_of_32(self):
        model = build(tiny_config(), seed=0).eval()
        with pytest.raises(DimensionError):
            model(batch(hw=60))
        with pytest.raises(DimensionError):
            model(Tensor(np.zeros((1, 1, 64, 64), dtype=np.float32)))

    def test_eval_forward_is_deterministic(self):
        model = build(tiny_config(), seed=0).eval()
        x = batch(n=1, hw=64)
        a = model(x)
        b = model(x)
        assert np.array_equal(a.seg_logits.data, b.seg_logits.data)
        assert np.array_equal(a.height.data, b.height.data)

    def test_same_seed_same_weights(self):
        m1 = build(tiny_config(), seed=7)
        m2 = build(tiny_config(), seed=7)
        m3 = build(tiny_config(), seed=8)
        for (n1, p1), (_, p2) in zip(m1.named_parameters(), m2.named_parameters()):
            assert np.array_equal(p1.data, p2.data), n1
        diffs = [not np.array_equal(p1.data, p3.data)
                 for (_, p1), (_, p3) in zip(m1.named_parameters(), m3.named_parameters())]
        assert any(diffs)

    def test_capture_exposes_aggregated_features(self):
        model = build(tiny_config(), seed=0).eval()
        cap = {}
        model(batch(hw=64), capture=cap)
        agg = cap["aggregated"]
        assert agg.shape == (1, model.config.resolved_agg_channels(), 8, 8)  # H/8

    def test_train_dropout_seed_controls_variation(self):
        model = build(tiny_config(), seed=0)
        x = batch(n=2, hw=64)
        a = model(x, seed=11).seg_logits.data
        b = model(x, seed=11).seg_logits.data
        c = model(x, seed=12).seg_logits.data
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestStateArrays:
    def test_roundtrip_is_bitwise(self):
        src = build(tiny_config(), seed=1)
        dst = build(tiny_config(), seed=2)
        state = src.state_arrays()
        dst.load_state_arrays(state)
        x = batch(hw=64)
        a = src.eval()(x)
        b = dst.eval()(x)
        assert np.array_equal(a.seg_logits.data, b.seg_logits.data)
        assert np.array_equal(a.height.data, b.height.data)
        assert np.array_equal(a.week_logits.data, b.week_logits.data)

    def test_missing_parameter_rejected(self):
        model = build(tiny_config(), seed=0)
        state = model.state_arrays()
        key = next(k for k in state if k.startswith("param."))
        del state[key]
        with pytest.raises(ConfigError):
            model.load_state_arrays(state)

    def test_shape_mismatch_rejected(self):
        model = build(tiny_config(), seed=0)
        state = model.state_arrays()
        key = next(k for k in state if k.startswith("param."))
        state[key] = np.zeros(np.asarray(state[key]).shape + (1,), dtype=np.float32)
        with pytest.raises(DimensionError):
            model.load_state_arrays(state)

    def test_parameter_names_unique_and_stamped(self):
        model = build(tiny_config(), seed=0)
        names = [n for n, _ in model.named_parameters()]
        assert len(names) == len(set(names))
        for name, p in model.named_parameters():
            assert p.name == name


class TestSingleTask:
    def test_each_task_builds_and_runs(self):
        for task in ("seg", "height", "week"):
            model = build_single_task(tiny_config(), task, seed=0).eval()
            out = model(batch(hw=64))
            present = {
                "seg": out.seg_logits, "height": out.height, "week": out.week_logits,
            }
            assert present[task] is not None
            for other, val in present.items():
                if other != task:
                    assert val is None

    def test_unknown_task_rejected(self):
        with pytest.raises(ConfigError):
            build_single_task(tiny_config(), "depth")

    def test_multitask_shares_trunk_param_names(self):
        multi = build(tiny_config(), seed=0)
        single = build_single_task(tiny_config(), "seg", seed=0)
        multi_names = {n for n, _ in multi.named_parameters()}
        for name, _ in single.named_parameters():
            assert name in multi_names
