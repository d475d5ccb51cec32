"""Encoder building blocks: stride geometry, residual rules, aux heads."""

import numpy as np
import pytest

from weedmtl.encoder import (AuxHeads, BilateralAggregation, DetailBranch,
                             SemanticBranch, StemBlock, UIBBlock, UIBSpec)
from weedmtl.errors import ConfigError
from weedmtl.tensor import Tensor


def rng():
    return np.random.default_rng(0)


def image(n=1, c=3, h=64, w=64, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal((n, c, h, w)).astype(np.float32))


class TestUIBSpec:
    def test_valid_kernels_only(self):
        UIBSpec(kernel_start=0, kernel_mid=3, kernel_end=5).validate()
        with pytest.raises(ConfigError):
            UIBSpec(kernel_mid=2).validate()
        with pytest.raises(ConfigError):
            UIBSpec(kernel_start=7).validate()

    def test_expand_ratio_floor(self):
        with pytest.raises(ConfigError):
            UIBSpec(expand_ratio=0).validate()


class TestUIBBlock:
    def test_stride_two_halves_resolution(self):
        block = UIBBlock(rng(), 8, 16, 2, UIBSpec())
        out = block(image(c=8, h=16, w=16))
        assert out.shape == (1, 16, 8, 8)

    def test_stride_one_keeps_resolution(self):
        block = UIBBlock(rng(), 8, 8, 1, UIBSpec())
        assert block(image(c=8, h=16, w=16)).shape == (1, 8, 16, 16)

    def test_residual_requires_same_shape(self):
        assert UIBBlock(rng(), 8, 8, 1, UIBSpec()).use_residual
        assert not UIBBlock(rng(), 8, 16, 1, UIBSpec()).use_residual
        assert not UIBBlock(rng(), 8, 8, 2, UIBSpec()).use_residual

    def test_zero_layer_scale_residual_is_identity(self):
        block = UIBBlock(rng(), 8, 8, 1, UIBSpec(layer_scale_init=0.0))
        x = image(c=8, h=16, w=16)
        out = block(x)
        assert np.array_equal(out.data, x.data)

    def test_stride_without_mid_kernel_rejected(self):
        with pytest.raises(ConfigError):
            UIBBlock(rng(), 8, 16, 2, UIBSpec(kernel_mid=0))

    def test_kernel_zero_skips_branch(self):
        block = UIBBlock(rng(), 8, 8, 1, UIBSpec(kernel_start=0, kernel_mid=0, kernel_end=0))
        assert block.start is None and block.mid is None and block.end is None
        assert block(image(c=8, h=8, w=8)).shape == (1, 8, 8, 8)

    def test_all_kernels_active(self):
        block = UIBBlock(rng(), 8, 8, 1,
                         UIBSpec(kernel_start=3, kernel_mid=5, kernel_end=3))
        assert block.start is not None and block.end is not None
        assert block(image(c=8, h=8, w=8)).shape == (1, 8, 8, 8)

    def test_se_toggle(self):
        assert UIBBlock(rng(), 8, 8, 1, UIBSpec(use_se=True)).se is not None
        assert UIBBlock(rng(), 8, 8, 1, UIBSpec(use_se=False)).se is None


class TestBranches:
    def test_detail_branch_eighth_resolution(self):
        branch = DetailBranch(rng(), 3, (8, 8, 16))
        out = branch(image(h=64, w=64))
        assert out.shape == (1, 16, 8, 8)

    def test_stem_quarter_resolution(self):
        stem = StemBlock(rng(), 3, 8)
        assert stem(image(h=64, w=64)).shape == (1, 8, 16, 16)

    def test_semantic_branch_stage_strides(self):
        # eval mode: the context block batch-norms a 1x1 map, so training
        # statistics would need batch >= 2
        branch = SemanticBranch(rng(), 3, (4, 8, 16, 32), (1, 1, 1), UIBSpec()).eval()
        f_stem, f3, f4, f5, ctx = branch(image(h=64, w=64))
        assert f_stem.shape == (1, 4, 16, 16)    # 1/4
        assert f3.shape == (1, 8, 8, 8)          # 1/8
        assert f4.shape == (1, 16, 4, 4)         # 1/16
        assert f5.shape == (1, 32, 2, 2)         # 1/32
        assert ctx.shape == f5.shape

    def test_semantic_branch_needs_depth(self):
        with pytest.raises(ConfigError):
            SemanticBranch(rng(), 3, (4, 8, 16, 32), (0, 1, 1), UIBSpec())

    def test_aggregation_fuses_at_detail_resolution(self):
        agg = BilateralAggregation(rng(), 16, 32, 24)
        detail = image(c=16, h=8, w=8, seed=1)
        semantic = image(c=32, h=2, w=2, seed=2)
        assert agg(detail, semantic).shape == (1, 24, 8, 8)


class TestAuxHeads:
    def test_four_full_resolution_maps(self):
        heads = AuxHeads(rng(), (4, 8, 16, 32), hidden=8, num_classes=5)
        feats = (image(c=4, h=16, w=16), image(c=8, h=8, w=8),
                 image(c=16, h=4, w=4), image(c=32, h=2, w=2))
        outs = heads(feats)
        assert len(outs) == 4
        for out in outs:
            assert out.shape == (1, 5, 64, 64)   # every head reaches full res

    def test_upsample_factors(self):
        assert AuxHeads.FACTORS == (4, 8, 16, 32)
