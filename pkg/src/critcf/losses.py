"""Margin penalties, learnable selection bounds, and the loss functions.

Every loss here is evaluated over whole batches of users against the full
item axis (no negative sampling).  Negative-item sums are computed through
the complement identity

    sum over unobserved items = sum over all items - sum over observed items

which keeps the per-batch cost at O(B * |V|) regardless of how many
unobserved entries there are.

All loss functions return analytic gradients alongside the value.  Gradient
conventions: the hinge subgradient at an exactly-zero margin is 0, so an
instance that satisfies every bound has both zero loss and zero gradient.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

# Overflow guard for the exponential penalty; exp(700) is near the float64
# ceiling.
_EXP_CLAMP = 700.0

# Positivity floor for bound factors, enforced by the trainer after every
# step.  Prediction-time normalization divides by a product of two bound
# factors, so the floor squared is the smallest legal denominator.
POSITIVITY_FLOOR = 1e-3


class MarginPenalty:
    """A monotone penalty g with g(0) = 0 applied to clamped hinge margins.

    ``doubling_factor`` is the smallest constant M with g(2x) <= M * g(x)
    for all x >= 0, or None when no finite M exists.  Penalties without a
    finite factor are excluded from the ranking-loss upper-bound check.
    """

    name = ""
    doubling_factor = None

    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        """Derivative; at x = 0 this is the right-derivative."""
        raise NotImplementedError


class LinearPenalty(MarginPenalty):
    name = "linear"
    doubling_factor = 2.0

    def value(self, x):
        return np.asarray(x, dtype=float) * 1.0

    def grad(self, x):
        return np.ones_like(np.asarray(x, dtype=float))


class SquarePenalty(MarginPenalty):
    name = "square"
    doubling_factor = 4.0

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return x * x

    def grad(self, x):
        return 2.0 * np.asarray(x, dtype=float)


class ExpPenalty(MarginPenalty):
    """g(x) = exp(x) - 1.  Grows too fast for a finite doubling factor."""

    name = "expm1"
    doubling_factor = None

    def value(self, x):
        return np.expm1(np.minimum(np.asarray(x, dtype=float), _EXP_CLAMP))

    def grad(self, x):
        return np.exp(np.minimum(np.asarray(x, dtype=float), _EXP_CLAMP))


PENALTIES = {p.name: p for p in (LinearPenalty(), SquarePenalty(), ExpPenalty())}


def get_penalty(name):
    try:
        return PENALTIES[name]
    except KeyError:
        raise ConfigError(
            "unknown penalty %r; valid choices: %s" % (name, ", ".join(sorted(PENALTIES)))
        ) from None


@dataclass
class BoundParams:
    """Learnable per-user and per-item bound factors.

    The upper selection bound for (user u, item v, behavior k) is the rank-1
    product user_bound[u, k] * item_bound[v, k]; the lower bound is that
    value scaled by bound_ratio.  All factors stay >= POSITIVITY_FLOOR, so
    upper >= lower > 0 whenever 0 <= bound_ratio <= 1.
    """

    user_bound: np.ndarray  # (num_users, num_behaviors)
    item_bound: np.ndarray  # (num_items, num_behaviors)
    bound_ratio: float

    @property
    def num_behaviors(self):
        return self.user_bound.shape[1]

    def bounds(self, u, v, k):
        """Upper and lower bound for a single (user, item, behavior)."""
        upper = self.user_bound[u, k] * self.item_bound[v, k]
        return upper, self.bound_ratio * upper

    def upper_matrix(self, user_ids, k):
        """Dense (len(user_ids), num_items) upper-bound matrix for behavior k."""
        return np.outer(self.user_bound[user_ids, k], self.item_bound[:, k])

    def copy(self):
        return BoundParams(
            self.user_bound.copy(), self.item_bound.copy(), self.bound_ratio
        )


@dataclass
class LossConfig:
    """Weights shaping the combined multi-behavior objective."""

    neg_weight: float  # weight w on unobserved entries
    behavior_weights: tuple  # one weight per behavior, summing to 1
    penalty: MarginPenalty

    def validate(self, num_behaviors):
        if len(self.behavior_weights) != num_behaviors:
            raise ConfigError(
                "expected %d behavior weights, got %d"
                % (num_behaviors, len(self.behavior_weights))
            )
        total = float(sum(self.behavior_weights))
        if abs(total - 1.0) > 1e-9:
            raise ConfigError("behavior weights must sum to 1, got %.12g" % total)


def _positive_index(pos_lists):
    """Row/column index arrays for all observed entries of a batch."""
    sizes = [len(p) for p in pos_lists]
    total = sum(sizes)
    if total == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty
    rows = np.repeat(np.arange(len(pos_lists), dtype=np.int64), sizes)
    cols = np.concatenate([np.asarray(p, dtype=np.int64) for p in pos_lists if len(p)])
    return rows, cols


def hinge_criterion_loss(scores, pos_lists, upper, lower, neg_weight, penalty):
    """Single-behavior criterion loss for a batch of users against all items.

    Observed entries are penalized for scoring below their upper bound,
    unobserved entries for scoring above their lower bound:

        sum_{v observed} g((upper - score)_+)
        + w * sum_{v unobserved} g((score - lower)_+)

    Args:
        scores: (B, V) score matrix.
        pos_lists: length-B list of sorted arrays of observed item ids.
        upper, lower: (B, V) bound matrices.
        neg_weight: scalar w, or per-user (B,) array.
        penalty: MarginPenalty shaping the clamped margins.
    Returns:
        (loss, d_scores, d_upper, d_lower); gradient arrays match (B, V).
    """
    scores = np.asarray(scores, dtype=float)
    w = np.asarray(neg_weight, dtype=float)
    w_col = w[:, None] if w.ndim == 1 else w

    neg_margin = np.maximum(scores - lower, 0.0)
    neg_val = penalty.value(neg_margin)
    neg_grad = np.where(neg_margin > 0.0, penalty.grad(neg_margin), 0.0)

    rows, cols = _positive_index(pos_lists)
    pos_margin = np.maximum(upper[rows, cols] - scores[rows, cols], 0.0)
    pos_val = penalty.value(pos_margin)
    pos_grad = np.where(pos_margin > 0.0, penalty.grad(pos_margin), 0.0)

    w_at_pos = w[rows] if w.ndim == 1 else w
    loss = float(np.sum(pos_val) + np.sum(w_col * neg_val) - np.sum(w_at_pos * neg_val[rows, cols]))

    d_scores = w_col * neg_grad
    d_lower = -d_scores.copy()
    d_scores[rows, cols] = -pos_grad
    d_lower[rows, cols] = 0.0
    d_upper = np.zeros_like(scores)
    d_upper[rows, cols] = pos_grad
    return loss, d_scores, d_upper, d_lower


def behavior_criterion_loss(scores, user_ids, pos_lists, bounds, k, neg_weight, penalty):
    """Criterion loss of one behavior, with gradients chained into the bound factors.

    Returns (loss, d_scores, d_user_col, d_item_col) where d_user_col is the
    gradient w.r.t. user_bound[user_ids, k] (shape (B,)) and d_item_col the
    gradient w.r.t. item_bound[:, k] (shape (V,)).
    """
    ub = bounds.user_bound[user_ids, k]
    ib = bounds.item_bound[:, k]
    upper = np.outer(ub, ib)
    lower = bounds.bound_ratio * upper
    loss, d_scores, d_upper, d_lower = hinge_criterion_loss(
        scores, pos_lists, upper, lower, neg_weight, penalty
    )
    d_eff = d_upper + bounds.bound_ratio * d_lower
    d_user_col = d_eff @ ib
    d_item_col = d_eff.T @ ub
    return loss, d_scores, d_user_col, d_item_col


def criterion_total_loss(scores, user_ids, positives, bounds, cfg):
    """Weighted multi-behavior criterion loss over one batch.

    Args:
        scores: (B, V) shared score matrix.
        user_ids: (B,) user indices matching the score rows.
        positives: per-behavior list of per-user positive-item arrays,
            indexed as positives[k][u] over the FULL user axis.
        bounds: BoundParams.
        cfg: LossConfig; behavior_weights must sum to 1.
    Returns:
        (loss, d_scores, d_user_bound, d_item_bound) with d_user_bound of
        shape (B, K) aligned to user_ids and d_item_bound of shape (V, K).
    """
    num_behaviors = len(positives)
    cfg.validate(num_behaviors)
    B, V = scores.shape
    loss = 0.0
    d_scores = np.zeros_like(np.asarray(scores, dtype=float))
    d_user = np.zeros((B, num_behaviors))
    d_item = np.zeros((V, num_behaviors))
    for k in range(num_behaviors):
        lam = cfg.behavior_weights[k]
        if lam == 0.0:
            continue
        batch_pos = [positives[k][u] for u in user_ids]
        lk, dsk, duk, dik = behavior_criterion_loss(
            scores, user_ids, batch_pos, bounds, k, cfg.neg_weight, cfg.penalty
        )
        loss += lam * lk
        d_scores += lam * dsk
        d_user[:, k] = lam * duk
        d_item[:, k] = lam * dik
    return loss, d_scores, d_user, d_item


def regression_loss(scores, pos_lists, neg_weight):
    """Whole-data weighted regression toward 1 (observed) and 0 (unobserved).

        sum_{v observed} (1 - score)^2 + w * sum_{v unobserved} score^2

    Returns (loss, d_scores).
    """
    scores = np.asarray(scores, dtype=float)
    w = float(neg_weight)
    rows, cols = _positive_index(pos_lists)
    sq_all = scores * scores
    pos_scores = scores[rows, cols]
    pos_resid = 1.0 - pos_scores
    loss = float(
        np.sum(pos_resid * pos_resid) + w * (np.sum(sq_all) - np.sum(pos_scores * pos_scores))
    )
    d_scores = 2.0 * w * scores
    d_scores[rows, cols] = -2.0 * pos_resid
    return loss, d_scores


def bounded_regression_loss(scores, pos_lists, upper, lower, neg_weight):
    """Regression toward the learned bounds instead of the 1/0 constants.

    Observed entries regress to their upper bound, unobserved entries to
    their lower bound; no hinge, so overshooting is penalized too.  With
    upper fixed at 1 and lower at 0 this reduces to regression_loss.

    Returns (loss, d_scores, d_upper, d_lower).
    """
    scores = np.asarray(scores, dtype=float)
    w = float(neg_weight)
    rows, cols = _positive_index(pos_lists)

    neg_resid = scores - lower
    pos_resid = upper[rows, cols] - scores[rows, cols]
    neg_sq = neg_resid * neg_resid
    loss = float(
        np.sum(pos_resid * pos_resid) + w * (np.sum(neg_sq) - np.sum(neg_sq[rows, cols]))
    )

    d_scores = 2.0 * w * neg_resid
    d_lower = -d_scores.copy()
    d_scores[rows, cols] = -2.0 * pos_resid
    d_lower[rows, cols] = 0.0
    d_upper = np.zeros_like(scores)
    d_upper[rows, cols] = 2.0 * pos_resid
    return loss, d_scores, d_upper, d_lower


def bounded_regression_total_loss(scores, user_ids, positives, bounds, cfg):
    """Weighted multi-behavior bounded-regression loss (hinge-free variant).

    Same shapes and return convention as criterion_total_loss.
    """
    num_behaviors = len(positives)
    cfg.validate(num_behaviors)
    B, V = scores.shape
    loss = 0.0
    d_scores = np.zeros_like(np.asarray(scores, dtype=float))
    d_user = np.zeros((B, num_behaviors))
    d_item = np.zeros((V, num_behaviors))
    for k in range(num_behaviors):
        lam = cfg.behavior_weights[k]
        if lam == 0.0:
            continue
        batch_pos = [positives[k][u] for u in user_ids]
        ub = bounds.user_bound[user_ids, k]
        ib = bounds.item_bound[:, k]
        upper = np.outer(ub, ib)
        lower = bounds.bound_ratio * upper
        lk, dsk, d_up, d_lo = bounded_regression_loss(
            scores, batch_pos, upper, lower, cfg.neg_weight
        )
        d_eff = d_up + bounds.bound_ratio * d_lo
        loss += lam * lk
        d_scores += lam * dsk
        d_user[:, k] = lam * (d_eff @ ib)
        d_item[:, k] = lam * (d_eff.T @ ub)
    return loss, d_scores, d_user, d_item
