import math

import numpy as np
import pytest

from boxl1 import models as M
from boxl1.errors import DimensionMismatchError, ParameterError


def vec(*vals):
    return np.array(vals, dtype=float)


class TestLosses:
    def test_ce_uniform_logits(self):
        assert M.cross_entropy(np.zeros(7), 3) == pytest.approx(math.log(7))

    def test_ce_saturated(self):
        assert M.cross_entropy(vec(10.0, -10.0), 0) == pytest.approx(
            math.log1p(math.exp(-20.0)), rel=1e-12
        )

    def test_ce_direct(self):
        assert M.cross_entropy(vec(1.0, 2.0, 3.0), 2) == pytest.approx(0.40761, abs=1e-5)

    def test_ce_nonnegative_random(self, rng):
        for _ in range(50):
            logits = rng.normal(0, 5, 6)
            assert M.cross_entropy(logits, int(rng.integers(0, 6))) >= 0.0

    def test_ce_invalid_label(self):
        with pytest.raises(ParameterError):
            M.cross_entropy(vec(1.0, 2.0), 2)

    def test_margin_examples(self):
        assert M.margin_loss(vec(2.0, 1.0, 0.0), 0) == 1.0
        assert M.margin_loss(vec(0.0, 2.0, 1.0), 0) == -2.0
        assert M.margin_loss(vec(5.0, 5.0), 0) == 0.0

    def test_margin_sign_iff_misclassified(self, rng):
        for _ in range(100):
            logits = rng.normal(0, 2, 5)
            y = int(rng.integers(0, 5))
            assert (M.margin_loss(logits, y) < 0) == (int(np.argmax(logits)) != y) or (
                M.margin_loss(logits, y) == 0.0
            )

    def test_dlr_targeted_value(self):
        assert M.dlr_targeted(vec(4.0, 3.0, 2.0, 1.0), 0, 1) == pytest.approx(-0.4)

    def test_dlr_zero_numerator(self):
        assert M.dlr_targeted(vec(2.0, 2.0, 1.0, 0.0), 0, 1) == 0.0

    def test_dlr_permutation_of_other_logits(self):
        a = M.dlr_targeted(vec(4.0, 3.0, 2.0, 1.0, 0.5), 0, 1)
        b = M.dlr_targeted(vec(4.0, 3.0, 0.5, 1.0, 2.0), 0, 1)
        assert a == pytest.approx(b)

    def test_dlr_scale_shift_invariance(self, rng):
        for _ in range(50):
            z = rng.normal(0, 3, 6)
            a, c = float(rng.uniform(0.1, 5)), float(rng.normal(0, 4))
            assert M.dlr_targeted(z, 1, 3) == pytest.approx(
                M.dlr_targeted(a * z + c, 1, 3), rel=1e-9, abs=1e-12
            )

    def test_dlr_needs_four_classes(self):
        with pytest.raises(ParameterError):
            M.dlr_targeted(vec(1.0, 2.0, 3.0), 0, 1)


class TestGradients:
    @pytest.mark.parametrize("kind", M.LOSS_KINDS)
    def test_linear_and_mlp_match_finite_differences(self, kind, rng):
        lin = M.LinearSoftmaxModel.initialized(9, 5, rng)
        mlp = M.MlpModel.initialized((9, 14, 5), rng)
        for model in (lin, mlp):
            for _ in range(15):
                x = rng.random(9)
                y = int(rng.integers(0, 5))
                target = int((y + 2) % 5) if kind == M.LOSS_DLR_T else None
                _, ga = M.loss_and_grad(model, x, y, kind, target)
                gn = M.finite_diff_grad(model, x, y, kind, target=target)
                denom = max(np.linalg.norm(gn), 1e-12)
                assert np.linalg.norm(ga - gn) / denom <= 1e-5

    def test_linear_ce_closed_form(self, rng):
        model = M.LinearSoftmaxModel.initialized(6, 4, rng)
        x = rng.random(6)
        y = 2
        logits = model.logits(x)
        p = np.exp(logits - logits.max())
        p /= p.sum()
        p[y] -= 1.0
        _, g = M.loss_and_grad(model, x, y, "ce")
        np.testing.assert_allclose(g, model.W.T @ p, atol=1e-12)

    def test_constant_model_zero_gradient(self):
        model = M.LinearSoftmaxModel(np.zeros((3, 4)), vec(0.1, 0.2, 0.3))
        _, g = M.loss_and_grad(model, np.full(4, 0.5), 1, "ce")
        np.testing.assert_allclose(g, np.zeros(4), atol=1e-15)

    def test_dlr_requires_target(self, rng):
        model = M.LinearSoftmaxModel.initialized(4, 4, rng)
        with pytest.raises(ParameterError):
            M.loss_and_grad(model, rng.random(4), 0, M.LOSS_DLR_T)


class TestMakeBlobs:
    def test_separation_and_balance(self, rng):
        data = M.make_blobs(24, 101, 3, 9.0, rng)
        counts = np.bincount(data.labels, minlength=3)
        assert counts.max() - counts.min() <= 1
        assert data.inputs.min() >= 0.0 and data.inputs.max() <= 1.0

    def test_center_margin_guarantee(self, rng):
        d, margin = 30, 10.0
        data = M.make_blobs(d, 4, 2, margin, rng, noise_std=1e-9)
        a = data.inputs[data.labels == 0][0]
        b = data.inputs[data.labels == 1][0]
        assert np.abs(a - b).sum() >= margin - 1e-3

    def test_deterministic(self):
        a = M.make_blobs(10, 50, 2, 4.0, np.random.default_rng(3))
        b = M.make_blobs(10, 50, 2, 4.0, np.random.default_rng(3))
        np.testing.assert_array_equal(a.inputs, b.inputs)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_infeasible_margin(self, rng):
        with pytest.raises(ParameterError):
            M.make_blobs(10, 20, 2, 9.0, rng)  # needs 2 blocks of 6 > 10 dims

    def test_invalid_args(self, rng):
        with pytest.raises(ParameterError):
            M.make_blobs(10, 20, 2, 0.0, rng)
        with pytest.raises(ParameterError):
            M.make_blobs(10, 20, 1, 1.0, rng)


class TestTraining:
    def test_separable_blobs_high_accuracy(self, rng):
        data = M.make_blobs(16, 256, 2, 8.0, rng)
        model = M.LinearSoftmaxModel.initialized(16, 2, rng)
        M.train_plain(model, data, epochs=20, lr=1.0, rng=rng)
        assert M.accuracy(model, data) >= 0.99

    def test_zero_lr_keeps_parameters(self, rng):
        data = M.make_blobs(8, 64, 2, 3.0, rng)
        model = M.LinearSoftmaxModel.initialized(8, 2, rng)
        W0, b0 = model.W.copy(), model.b.copy()
        M.train_plain(model, data, epochs=3, lr=0.0, rng=rng)
        np.testing.assert_array_equal(model.W, W0)
        np.testing.assert_array_equal(model.b, b0)

    def test_deterministic_under_seed(self):
        data = M.make_blobs(8, 64, 2, 3.0, np.random.default_rng(0))
        runs = []
        for _ in range(2):
            model = M.MlpModel.initialized((8, 10, 2), np.random.default_rng(1))
            M.train_plain(model, data, epochs=4, lr=0.5, rng=np.random.default_rng(2))
            runs.append([W.copy() for W in model.weights])
        for Wa, Wb in zip(*runs):
            np.testing.assert_array_equal(Wa, Wb)


class TestModelInterfaces:
    def test_batched_logits_match_single(self, rng):
        mlp = M.MlpModel.initialized((6, 9, 3), rng)
        X = rng.random((5, 6))
        batch = mlp.logits(X)
        for i in range(5):
            np.testing.assert_allclose(batch[i], mlp.logits(X[i]), atol=1e-12)

    def test_counting_model(self, rng):
        inner = M.LinearSoftmaxModel.initialized(4, 3, rng)
        counter = M.CountingModel(inner)
        counter.logits(rng.random(4))
        counter.logits(rng.random((7, 4)))
        counter.grad_input(rng.random(4), rng.random(3))
        assert counter.forwards == 8
        assert counter.backwards == 1

    def test_negative_distance_model_gradient(self, rng):
        model = M.NegativeDistanceModel(rng.random(5))
        x = rng.random(5)
        _, ga = M.loss_and_grad(model, x, 1, "margin")
        gn = M.finite_diff_grad(model, x, 1, "margin")
        np.testing.assert_allclose(ga, gn, atol=1e-7)

    def test_dimension_validation(self):
        with pytest.raises(DimensionMismatchError):
            M.LinearSoftmaxModel(np.zeros((2, 3)), np.zeros(4))
        with pytest.raises(DimensionMismatchError):
            M.MlpModel([np.zeros((2, 3))], [np.zeros(2)])
