"""Full-ranking top-N evaluation with bound-normalized prediction scores.

Every unobserved item is a candidate: the ranked list for user u covers all
items except u's target-behavior training positives.  The prediction score
divides the raw model score by the target-behavior upper bound, so items a
user accepts easily (low bound) rank above equally-scored items with a
stricter bound.  Ties are broken by ascending item index, which makes the
fast counting path and the sort-everything oracle agree exactly.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .losses import POSITIVITY_FLOOR

DEFAULT_CUTOFFS = (10, 50, 100, 200)


@dataclass
class RankingReport:
    cutoffs: tuple
    hr: dict = field(default_factory=dict)
    ndcg: dict = field(default_factory=dict)
    per_user_rank: dict = field(default_factory=dict)  # user -> 1-based rank

    def format_table(self):
        lines = ["%-8s %-10s %-10s" % ("cutoff", "hr", "ndcg")]
        for n in self.cutoffs:
            lines.append("%-8d %-10.6f %-10.6f" % (n, self.hr[n], self.ndcg[n]))
        return "\n".join(lines)

    def format_kv(self):
        lines = []
        for n in self.cutoffs:
            lines.append("hr@%d=%.6f" % (n, self.hr[n]))
            lines.append("ndcg@%d=%.6f" % (n, self.ndcg[n]))
        return "\n".join(lines) + "\n"


def predict_scores(model, bounds, user_ids):
    """Bound-normalized prediction scores for a batch of users, all items.

    Returns raw_score / max(upper_bound, floor^2) where the upper bound is
    taken at the target behavior.  Without bound factors (regression
    variants) the raw scores are returned unchanged.
    """
    # layer=-1 picks the last output layer: the only one for the base
    # models, the target behavior's layer for the per-behavior variant.
    raw, _ = model.score_batch(user_ids, layer=-1)
    if bounds is None:
        return raw
    k = bounds.num_behaviors - 1
    denom = np.outer(bounds.user_bound[np.asarray(user_ids), k], bounds.item_bound[:, k])
    return raw / np.maximum(denom, POSITIVITY_FLOOR ** 2)


def rank_in_candidates(scores_row, excluded, item):
    """1-based rank of item among the non-excluded items of one score row.

    Rank counts strictly better candidates plus equal-scored candidates
    with a smaller index (the ascending-index tiebreak).
    """
    target_score = scores_row[item]
    better = scores_row > target_score
    tied_before = (scores_row == target_score) & (np.arange(len(scores_row)) < item)
    contenders = better | tied_before
    if len(excluded):
        contenders[excluded] = False
    return 1 + int(np.count_nonzero(contenders))


def rank_user(model, bounds, u, train, n):
    """Top-n recommendation list for one user, best first."""
    scores = predict_scores(model, bounds, np.array([u]))[0]
    excluded = train.positives[train.num_behaviors - 1][u]
    order = np.lexsort((np.arange(len(scores)), -scores))
    if len(excluded):
        keep = np.ones(len(scores), dtype=bool)
        keep[excluded] = False
        order = order[keep[order]]
    return order[:n]


def _metrics_from_ranks(ranks, num_users, cutoffs):
    # Sequential accumulation in user order, term-for-term identical to the
    # brute-force oracle so the two paths agree exactly.
    report = RankingReport(tuple(cutoffs))
    max_cut = max(cutoffs)
    for u in sorted(ranks):
        if ranks[u] <= max_cut:
            report.per_user_rank[u] = ranks[u]
    for n in cutoffs:
        hr_total = 0.0
        ndcg_total = 0.0
        for u in sorted(ranks):
            rank = ranks[u]
            if rank <= n:
                hr_total += 1.0
                ndcg_total += 1.0 / np.log2(rank + 1.0)
            else:
                hr_total += 0.0
                ndcg_total += 0.0
        report.hr[n] = hr_total / num_users
        report.ndcg[n] = ndcg_total / num_users
    return report


def evaluate(model, bounds, train, heldout, cutoffs=DEFAULT_CUTOFFS, batch_users=1024):
    """HR@N / NDCG@N of one held-out item per user over the full candidate set.

    heldout maps user index -> held-out item.  Candidates are all items
    minus the user's target-behavior training positives; the held-out item
    itself must not be among them.
    """
    num_users = train.num_users
    target = train.num_behaviors - 1
    ranks = {}
    for start in range(0, num_users, batch_users):
        batch = np.arange(start, min(start + batch_users, num_users))
        scores = predict_scores(model, bounds, batch)
        for row, u in enumerate(batch):
            item = int(heldout[u])
            excluded = train.positives[target][u]
            if item in excluded:
                raise DataError("held-out item %d of user %d is a training positive" % (item, u))
            ranks[int(u)] = rank_in_candidates(scores[row], excluded, item)
    return _metrics_from_ranks(ranks, num_users, cutoffs)


def brute_force_metrics(score_table, train, heldout, cutoffs=DEFAULT_CUTOFFS):
    """Oracle evaluation by materializing and fully sorting every candidate list.

    Intended for small instances and cross-checking: uses the general
    position-discounted gain sum over the whole top-N list with the ideal
    gain as normalizer, which reduces to the fast path's closed form when
    exactly one item is relevant.
    """
    num_users = train.num_users
    target = train.num_behaviors - 1
    report = RankingReport(tuple(cutoffs))
    max_cut = max(cutoffs)
    hr_totals = {n: 0.0 for n in cutoffs}
    dcg_totals = {n: 0.0 for n in cutoffs}
    for u in range(num_users):
        scores = np.asarray(score_table[u], dtype=float)
        excluded = set(int(v) for v in train.positives[target][u])
        candidates = [v for v in range(len(scores)) if v not in excluded]
        ordered = sorted(candidates, key=lambda v: (-scores[v], v))
        relevant = {int(heldout[u])}
        rank = ordered.index(int(heldout[u])) + 1
        if rank <= max_cut:
            report.per_user_rank[u] = rank
        for n in cutoffs:
            top = ordered[:n]
            hit = len(set(top) & relevant)
            hr_totals[n] += 1.0 if hit > 0 else 0.0
            dcg = sum(
                (2.0 ** (1 if re in relevant else 0) - 1.0) / np.log2(pos + 1.0)
                for pos, re in enumerate(top, start=1)
            )
            ideal = sum(
                (2.0 ** 1 - 1.0) / np.log2(pos + 1.0)
                for pos in range(1, min(len(relevant), n) + 1)
            )
            dcg_totals[n] += dcg / ideal
    for n in cutoffs:
        report.hr[n] = hr_totals[n] / num_users
        report.ndcg[n] = dcg_totals[n] / num_users
    return report
