import math

import numpy as np
import pytest

from recseg.datamodel import encode_one_hot
from recseg.losses import (
    LossConfig,
    combined_loss,
    cross_entropy,
    cross_entropy_grad,
    dice_loss,
    dice_loss_grad,
)


def finite_difference(fn, x, h=1e-6):
    """Central-difference gradient, independent of any analytic path."""
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        grad[idx] = (fn(xp) - fn(xm)) / (2 * h)
        it.iternext()
    return grad


def random_prediction(rng, shape):
    pred = rng.uniform(0.05, 1.0, size=shape)
    return pred / pred.sum(axis=-1, keepdims=True)


def random_one_hot(rng, shape):
    mask = rng.integers(0, shape[-1], size=shape[:2])
    return encode_one_hot(mask, shape[-1] - 1).astype(np.float64)


def assert_grad_close(analytic, numeric, rel_tol=1e-4):
    meaningful = np.abs(numeric) > 1e-7
    if meaningful.any():
        rel = np.abs(analytic[meaningful] - numeric[meaningful]) / np.abs(numeric[meaningful])
        assert rel.max() < rel_tol
    assert np.abs(analytic[~meaningful]).max(initial=0.0) < 1e-6


class TestCrossEntropy:
    def test_uniform_half_is_ln2(self):
        # 1x2 image, K=1, prediction 0.5 everywhere: every pixel contributes ln 2.
        pred = np.full((1, 2, 2), 0.5)
        target = encode_one_hot(np.array([[0, 1]]), 1)
        assert cross_entropy(pred, target) == pytest.approx(math.log(2), abs=1e-6)

    def test_perfect_prediction_is_zero(self):
        target = encode_one_hot(np.array([[0, 1], [2, 0]]), 2).astype(np.float64)
        assert cross_entropy(target, target) <= 1e-6

    def test_nonnegative_on_random_inputs(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            pred = random_prediction(rng, (5, 4, 3))
            target = random_one_hot(rng, (5, 4, 3))
            assert cross_entropy(pred, target) >= 0.0

    def test_replication_invariance(self):
        # Per-pixel averaging makes the loss invariant under tiling the image 2x2.
        rng = np.random.default_rng(1)
        pred = random_prediction(rng, (3, 3, 4))
        target = random_one_hot(rng, (3, 3, 4))
        tiled_pred = np.tile(pred, (2, 2, 1))
        tiled_target = np.tile(target, (2, 2, 1))
        assert cross_entropy(tiled_pred, tiled_target) == pytest.approx(
            cross_entropy(pred, target), rel=1e-12
        )

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            pred = random_prediction(rng, (4, 4, 3))
            target = random_one_hot(rng, (4, 4, 3))
            analytic = cross_entropy_grad(pred, target)
            numeric = finite_difference(lambda p: cross_entropy(p, target), pred)
            assert_grad_close(analytic, numeric)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            cross_entropy(np.ones((2, 2, 2)) / 2, np.zeros((2, 3, 2)))

    def test_unnormalized_prediction_rejected(self):
        pred = np.full((2, 2, 2), 0.9)
        target = encode_one_hot(np.zeros((2, 2), dtype=int), 1)
        with pytest.raises(ValueError, match="sum to 1"):
            cross_entropy(pred, target)


class TestDiceLoss:
    def test_identity_is_zero_for_any_smoothing(self):
        target = encode_one_hot(np.array([[0, 1], [1, 2]]), 2).astype(np.float64)
        for s in (0.1, 1.0, 10.0):
            assert dice_loss(target, target, smoothing=s) == pytest.approx(0.0, abs=1e-12)

    def test_empty_prediction_formula(self):
        # K=1, n foreground target pixels, zero predicted: d = 1 - 1/(n+1).
        for n in (1, 3, 7):
            mask = np.zeros((3, 3), dtype=int)
            mask.flat[:n] = 1
            target = encode_one_hot(mask, 1).astype(np.float64)
            pred = encode_one_hot(np.zeros((3, 3), dtype=int), 1).astype(np.float64)
            assert dice_loss(pred, target, smoothing=1.0) == pytest.approx(1 - 1 / (n + 1))

    def test_symmetric_for_binary_predictions(self):
        rng = np.random.default_rng(3)
        a = random_one_hot(rng, (4, 4, 3))
        b = random_one_hot(rng, (4, 4, 3))
        assert dice_loss(a, b) == pytest.approx(dice_loss(b, a), rel=1e-12)

    def test_range(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            pred = random_prediction(rng, (4, 5, 4))
            target = random_one_hot(rng, (4, 5, 4))
            value = dice_loss(pred, target)
            assert 0.0 <= value < 1.0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            pred = random_prediction(rng, (4, 4, 3))
            target = random_one_hot(rng, (4, 4, 3))
            analytic = dice_loss_grad(pred, target)
            numeric = finite_difference(lambda p: dice_loss(p, target), pred)
            assert_grad_close(analytic, numeric)


class TestCombinedLoss:
    def test_zero_weight_equals_cross_entropy(self):
        rng = np.random.default_rng(6)
        pred = random_prediction(rng, (3, 3, 3))
        target = random_one_hot(rng, (3, 3, 3))
        cfg = LossConfig(dice_weight=0.0)
        assert combined_loss(pred, target, True, cfg) == pytest.approx(
            cross_entropy(pred, target)
        )

    def test_pseudo_labels_skip_dice(self):
        rng = np.random.default_rng(7)
        pred = random_prediction(rng, (3, 3, 3))
        target = random_one_hot(rng, (3, 3, 3))
        cfg = LossConfig(dice_weight=5.0)
        assert combined_loss(pred, target, False, cfg) == pytest.approx(
            cross_entropy(pred, target)
        )

    def test_perfect_prediction_near_zero(self):
        target = encode_one_hot(np.array([[1, 0], [0, 2]]), 2).astype(np.float64)
        cfg = LossConfig(dice_weight=1.0)
        assert combined_loss(target, target, True, cfg) == pytest.approx(0.0, abs=1e-6)

    def test_decomposition(self):
        rng = np.random.default_rng(8)
        pred = random_prediction(rng, (4, 4, 3))
        target = random_one_hot(rng, (4, 4, 3))
        cfg = LossConfig(dice_weight=0.7)
        expected = cross_entropy(pred, target) + 0.7 * dice_loss(pred, target)
        assert combined_loss(pred, target, True, cfg) == pytest.approx(expected)


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(dice_weight=-1)
    with pytest.raises(ValueError):
        LossConfig(dice_smoothing=0)
    with pytest.raises(ValueError):
        LossConfig(log_epsilon=1e-2)
