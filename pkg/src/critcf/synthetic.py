"""Deterministic synthetic multi-behavior data with planted selection criteria.

Users and items get low-rank latent vectors; the affinity is their dot
product.  Each behavior has a global base threshold scaled by per-user and
per-item factors (a rank-1 threshold structure, so the learnable bounds of
the main model class can represent the planted criteria exactly).  A pair
is positive for a behavior when its affinity exceeds the scaled threshold.

Thresholds are calibrated by quantile so each behavior hits its target
count exactly.  Every user is guaranteed enough target positives to
survive the leave-one-out split: each user's strongest items are marked
positive first and only the remaining quota is filled globally.  The floor
uses the same per-behavior ordering as the global fill, so at spread 0
(one shared criterion per behavior) the behavior sets still nest exactly.
"""

from dataclasses import dataclass

import numpy as np

from .datasets import BehaviorDataset
from .errors import DataError


@dataclass
class SynthConfig:
    num_users: int = 200
    num_items: int = 100
    latent_dim: int = 8
    num_behaviors: int = 3
    densities: tuple = (0.20, 0.08, 0.04)
    criterion_spread: float = 0.5
    seed: int = 0
    min_target_positives: int = 3

    def validate(self):
        if self.num_users < 1 or self.num_items < 2:
            raise DataError("need at least 1 user and 2 items")
        if len(self.densities) != self.num_behaviors:
            raise DataError(
                "expected %d densities, got %d" % (self.num_behaviors, len(self.densities))
            )
        for a, b in zip(self.densities, self.densities[1:]):
            if b > a:
                raise DataError(
                    "densities must be non-increasing toward the target behavior, got %s"
                    % (self.densities,)
                )
        for rho in self.densities:
            if not 0.0 < rho <= 1.0:
                raise DataError("densities must lie in (0, 1], got %s" % (self.densities,))
        expected_target = self.densities[-1] * self.num_items
        if expected_target < self.min_target_positives:
            raise DataError(
                "target density %.4g yields %.2f expected target items per user; "
                "need at least %.4g to guarantee %d positives per user"
                % (self.densities[-1], expected_target,
                   self.min_target_positives / self.num_items,
                   self.min_target_positives)
            )


def _floored_mask(adjusted, count, floor):
    """Top-count mask with a per-user floor.

    Marks each user's ``floor`` largest entries, then the globally largest
    unmarked entries until exactly ``count`` are set.  Ties break toward the
    lower index (stable sort on the negated values).
    """
    num_users, num_items = adjusted.shape
    mask = np.zeros((num_users, num_items), dtype=bool)
    if floor > 0:
        top = np.argsort(-adjusted, axis=1, kind="stable")[:, :floor]
        np.put_along_axis(mask, top, True, axis=1)
    remaining = count - int(mask.sum())
    if remaining < 0:
        raise DataError(
            "count %d cannot honor a floor of %d items for each of %d users"
            % (count, floor, num_users)
        )
    if remaining > 0:
        flat = np.where(mask.ravel(), -np.inf, adjusted.ravel())
        order = np.argsort(-flat, kind="stable")[:remaining]
        mask.ravel()[order] = True
    return mask


def generate(cfg):
    """Build a planted dataset; returns (dataset, user_ids, item_ids).

    The dataset carries target_order (a random per-user permutation of the
    target positives standing in for timestamps), ready for the
    leave-one-out split.  Fixed seeds give identical datasets.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    scale = 1.0 / np.sqrt(cfg.latent_dim)
    user_latent = rng.normal(size=(cfg.num_users, cfg.latent_dim)) * scale
    item_latent = rng.normal(size=(cfg.num_items, cfg.latent_dim)) * scale
    user_factor = np.exp(
        cfg.criterion_spread * rng.normal(size=(cfg.num_users, cfg.num_behaviors))
    )
    item_factor = np.exp(
        cfg.criterion_spread * rng.normal(size=(cfg.num_items, cfg.num_behaviors))
    )

    # The same floor applies to every behavior: densities are non-increasing
    # toward the target, so coarser behaviors always have quota to spare, and
    # a shared floor is what keeps the spread-0 sets nested.
    affinity = user_latent @ item_latent.T
    total = cfg.num_users * cfg.num_items
    masks = []
    for k in range(cfg.num_behaviors):
        adjusted = affinity / np.outer(user_factor[:, k], item_factor[:, k])
        count = max(1, int(round(cfg.densities[k] * total)))
        masks.append(_floored_mask(adjusted, count, cfg.min_target_positives))

    target = cfg.num_behaviors - 1
    positives = [
        [np.flatnonzero(masks[k][u]).astype(np.int64) for u in range(cfg.num_users)]
        for k in range(cfg.num_behaviors)
    ]
    target_order = [rng.permutation(positives[target][u]).astype(np.int64)
                    for u in range(cfg.num_users)]
    dataset = BehaviorDataset(cfg.num_users, cfg.num_items, cfg.num_behaviors,
                              positives, target_order)
    user_ids = [str(u) for u in range(cfg.num_users)]
    item_ids = [str(v) for v in range(cfg.num_items)]
    return dataset, user_ids, item_ids
