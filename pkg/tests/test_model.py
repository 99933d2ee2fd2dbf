"""Block semantics, shape laws and end-to-end gradients of the network."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msrn.engine import (
    Tape,
    Tensor,
    add,
    backprop,
    batchnorm,
    concat_channels,
    conv3d,
    relu,
    softmax_cross_entropy,
)
from msrn.errors import ConfigError, ShapeError
from msrn.model import Model, ModelSpec, build_model

from gradcheck import max_fd_error
from param_count_oracle import count_learnables

TINY = ModelSpec(patch_size=7, bands=9, classes=3, kernel_count=4)


def tiny_model(seed=0):
    return build_model(TINY, np.random.default_rng(seed))


class TestModelSpec:
    def test_stem_band_extent_indian_pines(self):
        spec = ModelSpec(patch_size=11, bands=200, classes=16)
        assert spec.stem_band_extent == 97

    def test_stem_band_extent_pavia(self):
        spec = ModelSpec(patch_size=11, bands=103, classes=9)
        assert spec.stem_band_extent == 49

    def test_too_few_bands_rejected(self):
        with pytest.raises(ConfigError):
            ModelSpec(patch_size=7, bands=6, classes=3)

    def test_even_patch_rejected(self):
        with pytest.raises(ConfigError):
            ModelSpec(patch_size=8, bands=20, classes=3)


class TestBlocks:
    def test_spectral_block_preserves_paper_shape(self):
        spec = ModelSpec(patch_size=11, bands=200, classes=16, kernel_count=24)
        model = build_model(spec, np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).normal(size=(1, 11, 11, 97, 24)))
        out = model.spectral.forward(x, "EVAL", None)
        assert out.shape == (1, 11, 11, 97, 24)

    def test_spatial_block_preserves_shape(self):
        model = build_model(ModelSpec(11, 103, 9, 24), np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).normal(size=(1, 11, 11, 1, 24)))
        out = model.spatial.forward(x, "EVAL", None)
        assert out.shape == (1, 11, 11, 1, 24)

    @pytest.mark.parametrize("mode", ["TRAIN", "EVAL"])
    def test_zeroed_fusion_is_bitwise_identity(self, mode):
        model = tiny_model(3)
        model.zero_fusion_paths()
        rng = np.random.default_rng(4)
        xs = Tensor(rng.normal(size=(2, 5, 5, 2, 4)))
        out_spec = model.spectral.forward(xs, mode, None)
        assert np.array_equal(out_spec.data, xs.data)
        xt = Tensor(rng.normal(size=(2, 5, 5, 1, 4)))
        out_spat = model.spatial.forward(xt, mode, None)
        assert np.array_equal(out_spat.data, xt.data)

    def test_block_equals_hand_composition(self):
        model = tiny_model(7)
        rng = np.random.default_rng(8)
        block = model.spectral
        # randomize running stats so EVAL BN is a nontrivial transform
        for unit in block.branches + [block.fusion]:
            unit.bn.running_mean.data[...] = rng.normal(size=unit.bn.running_mean.size)
            unit.bn.running_var.data[...] = rng.random(unit.bn.running_var.size) + 0.5
        x = Tensor(rng.normal(size=(2, 5, 5, 2, 4)))
        got = block.forward(x, "EVAL", None)

        parts = []
        for unit in block.branches:
            y = conv3d(x, unit.spec, unit.weight, unit.bias)
            y = batchnorm(y, unit.bn, "EVAL")
            parts.append(relu(y))
        merged = concat_channels(parts)
        fused = batchnorm(
            conv3d(merged, block.fusion.spec, block.fusion.weight, block.fusion.bias),
            block.fusion.bn, "EVAL")
        want = add(x, fused)
        assert np.max(np.abs(got.data - want.data)) <= 1e-12

    def test_single_branch_reduces_to_plain_conv_path(self):
        model = tiny_model(9)
        block = model.spatial
        k = TINY.kernel_count
        # silence every branch but the 1x1x1 one
        for unit in block.branches[1:]:
            unit.weight.data[...] = 0.0
            unit.bias.data[...] = 0.0
            unit.bn.beta.data[...] = 0.0
        rng = np.random.default_rng(10)
        x = Tensor(rng.normal(size=(2, 5, 5, 1, k)))
        got = block.forward(x, "EVAL", None)

        unit = block.branches[0]
        branch = relu(batchnorm(conv3d(x, unit.spec, unit.weight, unit.bias),
                                unit.bn, "EVAL"))
        # fusion sees [branch, 0, 0]; only its first k input channels act
        sub_weight = Tensor(block.fusion.weight.data[:, :, :, :k, :])
        from msrn.engine import Conv3dSpec
        sub_spec = Conv3dSpec((1, 1, 1), (1, 1, 1), "SAME", k, k)
        fused = batchnorm(conv3d(branch, sub_spec, sub_weight, block.fusion.bias),
                          block.fusion.bn, "EVAL")
        want = add(x, fused)
        assert np.max(np.abs(got.data - want.data)) <= 1e-12

    def test_every_branch_is_live_after_random_init(self):
        rng = np.random.default_rng(11)
        x_spec = Tensor(rng.normal(size=(2, 5, 5, 2, 4)))
        x_spat = Tensor(rng.normal(size=(2, 5, 5, 1, 4)))
        for block_name, x in (("spectral", x_spec), ("spatial", x_spat)):
            baseline_model = tiny_model(12)
            block = getattr(baseline_model, block_name)
            baseline = block.forward(x, "EVAL", None)
            for idx in range(3):
                model = tiny_model(12)
                block = getattr(model, block_name)
                unit = block.branches[idx]
                unit.weight.data[...] = 0.0
                unit.bias.data[...] = 0.0
                unit.bn.beta.data[...] = 0.0
                changed = block.forward(x, "EVAL", None)
                assert not np.array_equal(changed.data, baseline.data), (
                    f"{block_name} branch {idx} had no effect")

    def test_channel_mismatch_rejected(self):
        model = tiny_model()
        with pytest.raises(ShapeError):
            model.spectral.forward(Tensor(np.zeros((1, 5, 5, 2, 7))), "EVAL", None)


class TestModelForward:
    def test_logits_shape(self):
        model = tiny_model()
        batch = Tensor(np.random.default_rng(0).normal(size=(3, 7, 7, 9, 1)))
        logits = model.forward(batch, "EVAL")
        assert logits.shape == (3, TINY.classes)

    def test_eval_is_pure(self):
        model = tiny_model(1)
        batch = Tensor(np.random.default_rng(2).normal(size=(2, 7, 7, 9, 1)))
        a = model.forward(batch, "EVAL")
        b = model.forward(batch, "EVAL")
        assert np.array_equal(a.data, b.data)

    def test_eval_is_batch_size_invariant(self):
        model = tiny_model(5)
        data = np.random.default_rng(6).normal(size=(16, 7, 7, 9, 1))
        batched = model.forward(Tensor(data), "EVAL").data
        singles = np.concatenate([
            model.forward(Tensor(data[i:i + 1]), "EVAL").data for i in range(16)])
        assert np.max(np.abs(batched - singles)) <= 1e-10

    def test_wrong_input_shape_rejected(self):
        model = tiny_model()
        with pytest.raises(ShapeError):
            model.forward(Tensor(np.zeros((1, 7, 7, 8, 1))), "EVAL")

    @given(patch=st.sampled_from([5, 7]), bands=st.integers(7, 12),
           k=st.integers(1, 3), classes=st.integers(2, 4))
    @settings(max_examples=10)
    def test_shape_chain_over_random_specs(self, patch, bands, k, classes):
        spec = ModelSpec(patch, bands, classes, kernel_count=k)
        model = build_model(spec, np.random.default_rng(0))
        batch = Tensor(np.random.default_rng(1).normal(size=(2, patch, patch, bands, 1)))
        assert model.forward(batch, "EVAL").shape == (2, classes)


class TestParameters:
    def test_count_matches_independent_oracle(self):
        for bands, classes, k in [(200, 16, 24), (103, 9, 24), (9, 3, 4)]:
            spec = ModelSpec(11 if bands > 9 else 7, bands, classes, kernel_count=k)
            model = build_model(spec, np.random.default_rng(0))
            assert model.learnable_count() == count_learnables(bands, classes, k)

    def test_default_indian_pines_count_frozen(self):
        spec = ModelSpec(patch_size=13, bands=200, classes=16, kernel_count=24)
        model = build_model(spec, np.random.default_rng(0))
        assert model.learnable_count() == count_learnables(200, 16, 24) == 94672

    def test_order_is_deterministic(self):
        names1 = [n for n, _ in tiny_model(0).params.items()]
        names2 = [n for n, _ in tiny_model(99).params.items()]
        assert names1 == names2
        assert names1[0] == "stem.conv.weight"
        assert names1[-1] == "head.dense.bias"


class TestEndToEndGradients:
    def test_tiny_model_gradcheck(self):
        for seed in range(3):
            rng = np.random.default_rng(40 + seed)
            model = tiny_model(seed)
            batch = Tensor(rng.normal(size=(2, 7, 7, 9, 1)))
            labels = rng.integers(0, TINY.classes, size=2)
            leaves = [t for _, t in model.params.learnables()]

            def build(tape):
                logits = model.forward(batch, "TRAIN", tape=tape,
                                       rng=np.random.default_rng(1000 + seed))
                return softmax_cross_entropy(logits, labels, tape=tape)[0]

            tape = Tape()
            loss = build(tape)
            grads = backprop(tape, loss)

            def loss_fn():
                return build(None).item()

            err = max_fd_error(loss_fn, leaves, grads, rng=rng, max_coords=2)
            assert err < 1e-4, f"seed {seed}: rel err {err}"
