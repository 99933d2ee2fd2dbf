"""Finite-difference checks for every primitive with learnables.

Each check builds a smooth position-sensitive scalar loss (sum of the output
times a fixed random mixing constant) so that indexing mistakes anywhere in
the backward pass show up as gradient disagreement.
"""

import numpy as np
import pytest

from msrn.engine import (
    BatchNormState,
    Conv3dSpec,
    Tape,
    Tensor,
    backprop,
    batchnorm,
    conv3d,
    dense,
    dropout,
    global_avg_pool,
    reduce_sum,
    relu,
    scale,
    softmax_cross_entropy,
)

from gradcheck import max_fd_error

SEEDS = range(20)


def _checked(loss_builder, leaves, rng, max_coords=30):
    """Record one forward, backprop, and compare against central differences."""
    tape = Tape()
    loss = loss_builder(tape)
    grads = backprop(tape, loss)

    def loss_fn():
        return loss_builder(None).item()

    return max_fd_error(loss_fn, leaves, grads, rng=rng, max_coords=max_coords)


def test_conv3d_sum_loss_vs_finite_differences():
    spec = Conv3dSpec((2, 2, 3), (1, 1, 1), "VALID", 2, 2)
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(1, 3, 3, 5, 2)), requires_grad=True)
        w = Tensor(rng.normal(size=spec.weight_shape), requires_grad=True)
        b = Tensor(rng.normal(size=2), requires_grad=True)

        def build(tape):
            return reduce_sum(conv3d(x, spec, w, b, tape=tape), tape=tape)

        err = _checked(build, [x, w, b], rng)
        assert err < 1e-6, f"seed {seed}: rel err {err}"


@pytest.mark.parametrize("padding,stride", [("SAME", (1, 1, 1)), ("VALID", (1, 2, 2))])
def test_conv3d_padded_and_strided_gradients(padding, stride):
    spec = Conv3dSpec((3, 1, 3), stride, padding, 2, 3)
    for seed in SEEDS:
        rng = np.random.default_rng(100 + seed)
        x = Tensor(rng.normal(size=(2, 4, 3, 5, 2)), requires_grad=True)
        w = Tensor(rng.normal(size=spec.weight_shape), requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)
        mix = rng.normal(size=conv3d(x, spec, w, b).shape)

        def build(tape):
            out = conv3d(x, spec, w, b, tape=tape)
            return reduce_sum(scale(out, mix, tape=tape), tape=tape)

        err = _checked(build, [x, w, b], rng, max_coords=25)
        assert err < 1e-6, f"seed {seed}: rel err {err}"


def test_batchnorm_gradients_vs_finite_differences():
    for seed in SEEDS:
        rng = np.random.default_rng(200 + seed)
        state = BatchNormState.create(3)
        state.gamma.data[...] = rng.normal(size=3)
        state.beta.data[...] = rng.normal(size=3)
        x = Tensor(rng.normal(size=(4, 2, 3)), requires_grad=True)
        mix = rng.normal(size=(4, 2, 3))

        def build(tape):
            out = batchnorm(x, state, "TRAIN", tape=tape)
            return reduce_sum(scale(out, mix, tape=tape), tape=tape)

        err = _checked(build, [x, state.gamma, state.beta], rng, max_coords=24)
        assert err < 1e-6, f"seed {seed}: rel err {err}"


def test_relu_gradients_vs_finite_differences():
    for seed in SEEDS:
        rng = np.random.default_rng(400 + seed)
        # keep values away from the kink so central differences are valid
        values = rng.normal(size=(3, 5))
        values[np.abs(values) < 1e-3] = 0.5
        x = Tensor(values, requires_grad=True)
        mix = rng.normal(size=(3, 5))

        def build(tape):
            return reduce_sum(scale(relu(x, tape=tape), mix, tape=tape), tape=tape)

        err = _checked(build, [x], rng)
        assert err < 1e-6, f"seed {seed}: rel err {err}"


def test_dropout_gradient_matches_mask():
    for seed in SEEDS:
        rng = np.random.default_rng(500 + seed)
        x = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
        mix = rng.normal(size=(4, 6))

        def build(tape):
            out = dropout(x, 0.4, np.random.default_rng(seed), "TRAIN", tape=tape)
            return reduce_sum(scale(out, mix, tape=tape), tape=tape)

        err = _checked(build, [x], rng)
        assert err < 1e-6, f"seed {seed}: rel err {err}"


def test_dense_gradients_vs_finite_differences():
    for seed in SEEDS:
        rng = np.random.default_rng(300 + seed)
        x = Tensor(rng.normal(size=(4, 24)), requires_grad=True)
        w = Tensor(rng.normal(size=(24, 16)), requires_grad=True)
        b = Tensor(rng.normal(size=16), requires_grad=True)
        labels = rng.integers(0, 16, size=4)

        def build(tape):
            logits = dense(x, w, b, tape=tape)
            return softmax_cross_entropy(logits, labels, tape=tape)[0]

        err = _checked(build, [x, w, b], rng)
        assert err < 1e-6, f"seed {seed}: rel err {err}"


def test_global_avg_pool_gradients_vs_finite_differences():
    for seed in SEEDS:
        rng = np.random.default_rng(600 + seed)
        x = Tensor(rng.normal(size=(2, 3, 2, 2, 4)), requires_grad=True)
        mix = rng.normal(size=(2, 4))

        def build(tape):
            out = global_avg_pool(x, tape=tape)
            return reduce_sum(scale(out, mix, tape=tape), tape=tape)

        err = _checked(build, [x], rng)
        assert err < 1e-6, f"seed {seed}: rel err {err}"

    # uniform upstream spreads as 1/(h*w*b)
    x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 2, 2, 4)),
               requires_grad=True)
    tape = Tape()
    loss = reduce_sum(global_avg_pool(x, tape=tape), tape=tape)
    grads = backprop(tape, loss)
    np.testing.assert_allclose(grads[x.uid].data, 1.0 / 12.0)


def test_softmax_cross_entropy_gradient_formula(rng):
    logits = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    labels = np.array([0, 2, 1, 1, 0])
    tape = Tape()
    loss, probs = softmax_cross_entropy(logits, labels, tape=tape)
    grads = backprop(tape, loss)
    onehot = np.eye(3)[labels]
    np.testing.assert_allclose(grads[logits.uid].data,
                               (probs.data - onehot) / 5.0, atol=1e-15)


def test_softmax_cross_entropy_vs_finite_differences():
    for seed in SEEDS:
        rng = np.random.default_rng(700 + seed)
        logits = Tensor(rng.normal(size=(4, 5), scale=3.0), requires_grad=True)
        labels = rng.integers(0, 5, size=4)

        def build(tape):
            return softmax_cross_entropy(logits, labels, tape=tape)[0]

        err = _checked(build, [logits], rng)
        assert err < 1e-6, f"seed {seed}: rel err {err}"
