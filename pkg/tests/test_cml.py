import numpy as np
import pytest

from critcf.cml import (
    criterion_loss_per_user_weight,
    random_instance,
    triplet_reference_loss,
    verify_random_instances,
    verify_upper_bound,
)
from critcf.errors import ConfigError
from critcf.losses import get_penalty


def test_hand_case_square():
    # one user, one positive, one negative
    scores = np.array([[0.5, 0.8]])
    pos = [np.array([0])]
    upper = np.array([[1.0, 1.0]])
    lower = np.array([[0.5, 0.5]])
    penalty = get_penalty("square")
    # triplet margin = (1.0 - 0.5) + (0.8 - 0.5) = 0.8, squared 0.64
    lhs = triplet_reference_loss(scores, pos, upper, lower, penalty)
    assert lhs == pytest.approx(0.64, rel=1e-12)
    # criterion: 0.5^2 + (1/1) * 0.3^2 = 0.34; constant = 4 * 1
    crit = criterion_loss_per_user_weight(scores, pos, upper, lower, penalty)
    assert crit == pytest.approx(0.34, rel=1e-12)
    check = verify_upper_bound(scores, pos, upper, lower, penalty)
    assert check.constant == 4.0
    assert check.lhs == pytest.approx(0.64, rel=1e-12)
    assert check.rhs == pytest.approx(1.36, rel=1e-12)
    assert check.holds
    assert check.slack == pytest.approx(0.72, rel=1e-12)


def test_inactive_margins_give_zero():
    scores = np.array([[1.0, 0.1]])
    pos = [np.array([0])]
    upper = np.array([[0.9, 0.9]])
    lower = np.array([[0.45, 0.45]])
    check = verify_upper_bound(scores, pos, upper, lower, get_penalty("square"))
    assert check.lhs == 0.0 and check.rhs == 0.0 and check.holds


def test_users_without_both_sides_contribute_nothing():
    # a user with no positives and a user with no negatives produce no triplets
    scores = np.array([[0.5, 0.8], [0.5, 0.8]])
    pos = [np.array([], dtype=np.int64), np.array([0, 1])]
    upper = np.full((2, 2), 2.0)
    lower = np.zeros((2, 2))
    penalty = get_penalty("linear")
    assert triplet_reference_loss(scores, pos, upper, lower, penalty) == 0.0
    # the no-negative user takes weight zero instead of dividing by zero; the
    # positive half of the criterion loss remains
    crit = criterion_loss_per_user_weight(scores[1:], pos[1:], upper[1:], lower[1:], penalty)
    assert np.isfinite(crit)
    assert crit == pytest.approx((2.0 - 0.5) + (2.0 - 0.8), rel=1e-12)
    assert verify_upper_bound(scores, pos, upper, lower, penalty).holds


def test_random_instances_hold():
    for name in ("linear", "square"):
        checked, failures, min_slack = verify_random_instances(200, get_penalty(name), seed=0)
        assert checked == 200
        assert failures == 0
        assert min_slack >= -1e-9


def test_exponential_penalty_refused():
    scores, pos, upper, lower = random_instance(np.random.default_rng(0))
    with pytest.raises(ConfigError):
        verify_upper_bound(scores, pos, upper, lower, get_penalty("expm1"))


def test_raising_negative_score_never_shrinks_lhs():
    rng = np.random.default_rng(7)
    penalty = get_penalty("square")
    for _ in range(20):
        scores, pos, upper, lower = random_instance(rng)
        neg_cells = [(u, v) for u in range(scores.shape[0])
                     for v in range(scores.shape[1]) if v not in set(map(int, pos[u]))
                     and len(pos[u]) > 0]
        if not neg_cells:
            continue
        base = triplet_reference_loss(scores, pos, upper, lower, penalty)
        u, v = neg_cells[int(rng.integers(len(neg_cells)))]
        bumped = scores.copy()
        bumped[u, v] += 0.5
        after = triplet_reference_loss(bumped, pos, upper, lower, penalty)
        assert after >= base - 1e-12


def test_constant_uses_largest_negative_set():
    scores = np.array([[0.5, 0.8, 0.2], [0.5, 0.8, 0.2]])
    pos = [np.array([0]), np.array([0, 1])]
    upper = np.ones((2, 3))
    lower = 0.5 * upper
    check = verify_upper_bound(scores, pos, upper, lower, get_penalty("square"))
    assert check.constant == 4.0 * 2  # user 0 has two unobserved items
