import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from woundfill.autograd import Tensor
from woundfill.losses import (
    LossConfig,
    UnsupportedConfigError,
    ce_loss,
    compute_loss,
    confusion,
    dice_loss,
    focal_loss,
    miou,
    positive_weight,
    vertex_accuracy,
    weighted_ce_loss,
)
from woundfill.nn import grad_check

from oracles import symmetric_difference_accuracy


def _probs(p1):
    p1 = np.asarray(p1, dtype=np.float64)
    return Tensor(np.stack([1 - p1, p1], axis=1))


def test_focal_single_node():
    P = Tensor([[0.1, 0.9]])
    value = focal_loss(P, [1], LossConfig("focal", alpha=0.25, gamma=2.0)).item()
    assert value == pytest.approx(-0.25 * 0.1**2 * math.log(0.9), abs=1e-12)
    assert value == pytest.approx(2.634e-4, abs=1e-7)


def test_dice_half_half():
    value = dice_loss(_probs([0.5, 0.5]), [1, 0], LossConfig("dice", epsilon=1e-12)).item()
    assert value == pytest.approx(1 / 3, abs=1e-9)


def test_dice_limits():
    y = np.array([1, 0, 1, 0])
    assert dice_loss(_probs(y), y).item() == 0.0
    eps = LossConfig("dice").epsilon
    assert dice_loss(_probs(1 - y), y).item() == pytest.approx(1 - eps / (4 + eps))


def test_dice_needs_two_classes():
    with pytest.raises(UnsupportedConfigError):
        dice_loss(Tensor(np.full((2, 3), 1 / 3)), [0, 1])


def test_ce_values():
    assert ce_loss(Tensor([[0.7, 0.3]]), [1]).item() == pytest.approx(1.20397, abs=1e-5)
    assert ce_loss(Tensor([[0.5, 0.5]] * 3), [0, 1, 1]).item() == pytest.approx(math.log(2))


def test_weighted_ce_values():
    assert positive_weight([1, 1] + [0] * 8) == 4.0
    value = weighted_ce_loss(_probs([0.8, 0.4]), [1, 0], w=1.0).item()
    assert value == pytest.approx(-(math.log(0.8) + math.log(0.6)) / 2, abs=1e-12)
    assert value == pytest.approx(0.36700, abs=1e-4)


def test_weighted_ce_without_positives_warns():
    with pytest.warns(RuntimeWarning):
        w = positive_weight([0, 0, 0])
    assert w == 1.0


@pytest.mark.parametrize("kind", ["focal", "cross_entropy", "weighted_cross_entropy"])
def test_losses_vanish_at_ground_truth(kind):
    y = np.array([0, 1, 1, 0, 0])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert compute_loss(LossConfig(kind), _probs(y), y).item() < 1e-5


def test_focal_gamma_zero_equals_ce():
    rng = np.random.default_rng(0)
    p = rng.dirichlet([1, 1, 1], size=20)
    y = rng.integers(0, 3, size=20)
    a = focal_loss(Tensor(p), y, LossConfig("focal", alpha=None, gamma=0.0)).item()
    assert abs(a - ce_loss(Tensor(p), y).item()) < 1e-12


def test_label_out_of_range():
    with pytest.raises(ValueError):
        ce_loss(_probs([0.5]), [2])


@pytest.mark.parametrize("kind", ["focal", "dice", "cross_entropy", "weighted_cross_entropy"])
def test_loss_gradients(kind):
    cfg = LossConfig(kind)
    for seed in range(5):
        rng = np.random.default_rng(seed)
        y = rng.integers(0, 2, size=8)
        y[0] = 1
        p1 = rng.uniform(0.05, 0.95, size=8)
        err = grad_check(lambda t: compute_loss(cfg, t, y), np.stack([1 - p1, p1], 1))
        assert err < 1e-6


def test_miou_examples():
    y = np.array([0, 1, 1, 0])
    assert miou(y, y).miou == 1.0
    assert miou(1 - y, y).miou == 0.0
    true = np.array([1, 1, 1] + [0] * 7)
    pred = true.copy()
    pred[5] = 1
    r = miou(pred, true)
    assert r.per_class_iou == [6 / 7, 3 / 4]
    assert r.miou == pytest.approx(0.80357, abs=1e-5)


def test_miou_skips_absent_class():
    r = miou([0, 0, 0], [0, 0, 0])
    assert r.per_class_iou == [1.0, None] and r.miou == 1.0


def test_miou_length_mismatch():
    with pytest.raises(ValueError):
        confusion([0, 1], [0], 2)


def test_vertex_accuracy_examples():
    assert vertex_accuracy([1, 2, 3], [3, 2, 1], 10) == 1.0
    assert vertex_accuracy([], range(50), 1000) == 0.95
    with pytest.raises(ValueError):
        vertex_accuracy([10], [], 10)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_vertex_accuracy_matches_exhaustive_count(seed):
    rng = np.random.default_rng(seed)
    a = rng.choice(200, size=rng.integers(0, 200), replace=False)
    b = rng.choice(200, size=rng.integers(0, 200), replace=False)
    assert vertex_accuracy(a, b, 200) == symmetric_difference_accuracy(a, b, 200)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 60))
def test_metrics_permutation_invariant(seed, n):
    rng = np.random.default_rng(seed)
    pred, true = rng.integers(0, 2, n), rng.integers(0, 2, n)
    perm = rng.permutation(n)
    assert miou(pred, true).miou == miou(pred[perm], true[perm]).miou


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["focal", "dice", "cross_entropy", "weighted_cross_entropy"]))
def test_losses_non_negative_and_finite(seed, kind):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, 12)
    y[0] = 1
    p1 = rng.uniform(0, 1, 12)
    v = compute_loss(LossConfig(kind), _probs(p1), y).item()
    assert math.isfinite(v) and v >= 0
