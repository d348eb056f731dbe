"""Multi-behavior interaction parsing, filtering, splitting, and on-disk layout.

The raw input is a line-oriented log: user, item, behavior label, optional
timestamp, separated by tabs or commas.  Raw ids are arbitrary strings and
are densified by first appearance.  The pipeline is

    parse_interactions -> build_dataset -> leave_one_out_split -> write_dataset_dir

The last behavior index (num_behaviors - 1) is always the target behavior;
only its records are held out by the split, auxiliary behaviors stay in the
training positives untouched.
"""

import os
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import DataError

DEFAULT_BEHAVIORS = ("view", "cart", "buy")


class Interaction(NamedTuple):
    user: int
    item: int
    behavior: int
    timestamp: Optional[int]


@dataclass
class BehaviorDataset:
    """Per-behavior positive-item sets over dense user/item indices.

    positives[k][u] is a strictly sorted int64 array of the items user u
    interacted with under behavior k.  target_order, when present, lists
    each user's target-behavior items in chronological order and exists only
    between build_dataset and the split.
    """

    num_users: int
    num_items: int
    num_behaviors: int
    positives: list  # [k][u] -> sorted np.ndarray of item ids
    target_order: Optional[list] = None  # [u] -> np.ndarray in time order

    def target_positive_count(self, u):
        return len(self.positives[self.num_behaviors - 1][u])

    def copy(self):
        return BehaviorDataset(
            self.num_users,
            self.num_items,
            self.num_behaviors,
            [[arr.copy() for arr in per_user] for per_user in self.positives],
            None if self.target_order is None else [a.copy() for a in self.target_order],
        )


@dataclass
class SplitDataset:
    """Training positives plus one held-out target item per user for
    validation (second-last record) and test (last record).

    source_users maps each split user index back to the pre-split dataset
    index; it is the identity unless short-history users were dropped.
    """

    train: BehaviorDataset
    validation: np.ndarray  # (num_users,) held-out item per user
    test: np.ndarray  # (num_users,) held-out item per user
    source_users: np.ndarray
    dropped_users: int = 0


def detect_separator(line):
    if "\t" in line:
        return "\t"
    if "," in line:
        return ","
    raise DataError("cannot detect separator (no tab or comma): %r" % line[:80])


def parse_interactions(path, behavior_labels=DEFAULT_BEHAVIORS, separator=None):
    """Read a raw interaction log.

    Returns (interactions, user_ids, item_ids) where the id lists map dense
    index -> raw string in first-appearance order.
    """
    labels = {label: k for k, label in enumerate(behavior_labels)}
    interactions = []
    user_index = {}
    item_index = {}
    user_ids = []
    item_ids = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            sep = separator or detect_separator(line)
            parts = [p.strip() for p in line.split(sep)]
            if len(parts) not in (3, 4):
                raise DataError(
                    "%s:%d: expected 3 or 4 columns, got %d" % (path, lineno, len(parts))
                )
            user_raw, item_raw, behavior_raw = parts[0], parts[1], parts[2]
            if behavior_raw not in labels:
                raise DataError(
                    "%s:%d: unknown behavior %r (allowed: %s)"
                    % (path, lineno, behavior_raw, ", ".join(behavior_labels))
                )
            timestamp = None
            if len(parts) == 4:
                try:
                    timestamp = int(parts[3])
                except ValueError:
                    raise DataError(
                        "%s:%d: bad timestamp %r" % (path, lineno, parts[3])
                    ) from None
            if user_raw not in user_index:
                user_index[user_raw] = len(user_ids)
                user_ids.append(user_raw)
            if item_raw not in item_index:
                item_index[item_raw] = len(item_ids)
                item_ids.append(item_raw)
            interactions.append(
                Interaction(user_index[user_raw], item_index[item_raw],
                            labels[behavior_raw], timestamp)
            )
    return interactions, user_ids, item_ids


def _dedupe(interactions):
    """Collapse duplicate (user, item, behavior) records, keeping the first."""
    seen = set()
    out = []
    for it in interactions:
        key = (it.user, it.item, it.behavior)
        if key not in seen:
            seen.add(key)
            out.append(it)
    return out


def build_dataset(interactions, num_behaviors, min_target=5,
                  num_users=None, num_items=None):
    """Deduplicate, filter, and densify a raw interaction list.

    Users and items with fewer than min_target target-behavior positives are
    removed; removal can push other entities below the threshold, so the
    filter repeats until stable, and surviving indices are re-densified in
    ascending original order.

    Returns (dataset, kept_users, kept_items); the kept arrays map new dense
    index -> input index so callers can compose raw-id maps.
    """
    for it in interactions:
        if not 0 <= it.behavior < num_behaviors:
            raise DataError(
                "behavior id %d out of range for %d behaviors" % (it.behavior, num_behaviors)
            )
    if num_users is None:
        num_users = max((it.user for it in interactions), default=-1) + 1
    if num_items is None:
        num_items = max((it.item for it in interactions), default=-1) + 1

    records = _dedupe(interactions)
    target = num_behaviors - 1

    user_alive = np.ones(num_users, dtype=bool)
    item_alive = np.ones(num_items, dtype=bool)
    while True:
        user_counts = np.zeros(num_users, dtype=np.int64)
        item_counts = np.zeros(num_items, dtype=np.int64)
        for it in records:
            if it.behavior == target and user_alive[it.user] and item_alive[it.item]:
                user_counts[it.user] += 1
                item_counts[it.item] += 1
        drop_users = user_alive & (user_counts < min_target)
        drop_items = item_alive & (item_counts < min_target)
        if not drop_users.any() and not drop_items.any():
            break
        user_alive &= ~drop_users
        item_alive &= ~drop_items

    kept_users = np.flatnonzero(user_alive)
    kept_items = np.flatnonzero(item_alive)
    user_map = {old: new for new, old in enumerate(kept_users)}
    item_map = {old: new for new, old in enumerate(kept_items)}

    per_behavior = [[[] for _ in range(len(kept_users))] for _ in range(num_behaviors)]
    target_records = [[] for _ in range(len(kept_users))]
    for order, it in enumerate(records):
        if not (user_alive[it.user] and item_alive[it.item]):
            continue
        u, v = user_map[it.user], item_map[it.item]
        per_behavior[it.behavior][u].append(v)
        if it.behavior == target:
            ts = it.timestamp if it.timestamp is not None else 0
            target_records[u].append((ts, order, v))

    positives = [
        [np.array(sorted(items), dtype=np.int64) for items in per_user]
        for per_user in per_behavior
    ]
    # Chronological order, with file order breaking timestamp ties (and
    # standing in entirely when timestamps are absent).
    target_order = [
        np.array([v for _, _, v in sorted(recs)], dtype=np.int64)
        for recs in target_records
    ]
    ds = BehaviorDataset(len(kept_users), len(kept_items), num_behaviors,
                         positives, target_order)
    return ds, kept_users, kept_items


def leave_one_out_split(dataset, on_short="error"):
    """Hold out each user's last target record for test, second-last for validation.

    Users with fewer than 3 target positives cannot be split; on_short
    selects whether that raises (default) or silently drops them, with the
    drop count reported on the returned split.
    """
    if dataset.target_order is None:
        raise DataError("dataset has no target-order information; cannot split")
    if on_short not in ("error", "drop"):
        raise ValueError("on_short must be 'error' or 'drop'")

    short = {u for u in range(dataset.num_users) if len(dataset.target_order[u]) < 3}
    if short and on_short == "error":
        worst = min(short)
        raise DataError(
            "user %d has %d target positives; at least 3 are required to split"
            % (worst, len(dataset.target_order[worst]))
        )
    keep = np.array([u for u in range(dataset.num_users) if u not in short],
                    dtype=np.int64)

    target = dataset.num_behaviors - 1
    positives = []
    for k in range(dataset.num_behaviors):
        positives.append([dataset.positives[k][u].copy() for u in keep])
    validation = np.empty(len(keep), dtype=np.int64)
    test = np.empty(len(keep), dtype=np.int64)
    for new_u, u in enumerate(keep):
        order = dataset.target_order[u]
        test[new_u] = order[-1]
        validation[new_u] = order[-2]
        held = {int(order[-1]), int(order[-2])}
        kept_items = positives[target][new_u]
        positives[target][new_u] = np.array(
            [v for v in kept_items if int(v) not in held], dtype=np.int64
        )
    train = BehaviorDataset(len(keep), dataset.num_items, dataset.num_behaviors,
                            positives, None)
    return SplitDataset(train, validation, test, keep, dropped_users=len(short))


def drop_behavior(split, k):
    """Remove one auxiliary behavior from a split (for data ablations)."""
    if k == split.train.num_behaviors - 1:
        raise DataError("cannot drop the target behavior")
    train = split.train
    positives = [per_user for j, per_user in enumerate(train.positives) if j != k]
    new_train = BehaviorDataset(train.num_users, train.num_items,
                                train.num_behaviors - 1, positives, None)
    return SplitDataset(new_train, split.validation, split.test,
                        split.source_users, split.dropped_users)


def write_dataset_dir(out_dir, split, user_ids, item_ids, behavior_labels):
    """Serialize a split to a directory.

    Layout: meta.txt (counts and labels), index_map.txt (raw id to dense
    index, users then items), behavior_<k>.txt (one line per user: user
    index then space-separated sorted item indices), validation.txt and
    test.txt (user index, held-out item).
    """
    train = split.train
    if len(user_ids) != train.num_users or len(item_ids) != train.num_items:
        raise DataError(
            "id maps (%d users, %d items) do not match dataset (%d users, %d items)"
            % (len(user_ids), len(item_ids), train.num_users, train.num_items)
        )
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "meta.txt"), "w", encoding="utf-8") as fh:
        fh.write("num_users %d\n" % train.num_users)
        fh.write("num_items %d\n" % train.num_items)
        fh.write("num_behaviors %d\n" % train.num_behaviors)
        fh.write("behaviors %s\n" % ",".join(behavior_labels))
        fh.write("dropped_users %d\n" % split.dropped_users)
    with open(os.path.join(out_dir, "index_map.txt"), "w", encoding="utf-8") as fh:
        for dense, raw in enumerate(user_ids):
            fh.write("u\t%s\t%d\n" % (raw, dense))
        for dense, raw in enumerate(item_ids):
            fh.write("i\t%s\t%d\n" % (raw, dense))
    for k in range(train.num_behaviors):
        path = os.path.join(out_dir, "behavior_%d.txt" % k)
        with open(path, "w", encoding="utf-8") as fh:
            for u in range(train.num_users):
                items = " ".join(str(int(v)) for v in train.positives[k][u])
                fh.write("%d %s\n" % (u, items) if items else "%d\n" % u)
    for name, held in (("validation.txt", split.validation), ("test.txt", split.test)):
        with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
            for u in range(train.num_users):
                fh.write("%d %d\n" % (u, int(held[u])))


def read_dataset_dir(dataset_dir):
    """Load a serialized split; returns (split, user_ids, item_ids, labels)."""
    meta_path = os.path.join(dataset_dir, "meta.txt")
    if not os.path.exists(meta_path):
        raise DataError("%s: not a dataset directory (missing meta.txt)" % dataset_dir)
    meta = {}
    with open(meta_path, "r", encoding="utf-8") as fh:
        for line in fh:
            key, _, value = line.strip().partition(" ")
            meta[key] = value
    num_users = int(meta["num_users"])
    num_items = int(meta["num_items"])
    num_behaviors = int(meta["num_behaviors"])
    labels = tuple(meta["behaviors"].split(",")) if meta.get("behaviors") else ()

    user_ids = [""] * num_users
    item_ids = [""] * num_items
    with open(os.path.join(dataset_dir, "index_map.txt"), "r", encoding="utf-8") as fh:
        for line in fh:
            kind, raw, dense = line.rstrip("\n").split("\t")
            if kind == "u":
                user_ids[int(dense)] = raw
            else:
                item_ids[int(dense)] = raw

    positives = []
    for k in range(num_behaviors):
        path = os.path.join(dataset_dir, "behavior_%d.txt" % k)
        per_user = [np.empty(0, dtype=np.int64)] * num_users
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                tokens = line.split()
                u = int(tokens[0])
                per_user[u] = np.array([int(t) for t in tokens[1:]], dtype=np.int64)
        positives.append(per_user)

    def read_heldout(name):
        held = np.full(num_users, -1, dtype=np.int64)
        with open(os.path.join(dataset_dir, name), "r", encoding="utf-8") as fh:
            for line in fh:
                u, v = line.split()
                held[int(u)] = int(v)
        return held

    train = BehaviorDataset(num_users, num_items, num_behaviors, positives, None)
    split = SplitDataset(train, read_heldout("validation.txt"), read_heldout("test.txt"),
                         np.arange(num_users, dtype=np.int64),
                         dropped_users=int(meta.get("dropped_users", "0")))
    return split, user_ids, item_ids, labels
