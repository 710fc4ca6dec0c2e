"""Rating ingestion, preprocessing, preference factors, user splits and
synthetic dataset generation.

Input formats:
  ratings CSV:  header ``userId,itemId,rating,timestamp`` (timestamp ignored)
  metadata CSV: header ``itemId,title,factors`` with pipe-separated factors
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(Exception):
    """Malformed input or an empty/inconsistent processing result."""


_NO_FACTORS = "(no genres listed)"


@dataclass
class RawData:
    user_ids: np.ndarray
    item_ids: np.ndarray
    ratings: np.ndarray
    item_titles: dict
    item_factors: dict  # raw item id -> tuple of factor names


@dataclass
class InteractionDataset:
    """Binary user-item interactions with per-item factor labels.

    User/item indices are dense; per-user item lists are sorted; each item
    carries zero or more factor ids from the vocabulary.
    """

    item_lists: list            # user -> sorted np.ndarray of item indices
    item_factors: list          # item -> sorted np.ndarray of factor ids
    factor_names: list
    item_titles: list | None = None
    raw_item_ids: np.ndarray | None = None
    raw_user_ids: np.ndarray | None = None
    _factor_items: dict = field(default_factory=dict, repr=False)

    @property
    def n_users(self) -> int:
        return len(self.item_lists)

    @property
    def n_items(self) -> int:
        return len(self.item_factors)

    @property
    def n_factors(self) -> int:
        return len(self.factor_names)

    def items_with_factor(self, j: int) -> np.ndarray:
        """All item indices carrying factor j (cached, sorted)."""
        if j not in self._factor_items:
            self._factor_items[j] = np.array(
                [i for i, fs in enumerate(self.item_factors) if j in fs], dtype=np.int64)
        return self._factor_items[j]

    def dense_rows(self, users) -> np.ndarray:
        """Binary float64 matrix of the given users' interactions."""
        x = np.zeros((len(users), self.n_items))
        for r, u in enumerate(users):
            x[r, self.item_lists[u]] = 1.0
        return x


@dataclass
class UserSplit:
    train_users: np.ndarray
    val_users: np.ndarray
    test_users: np.ndarray
    fold_in: dict   # eval user -> sorted item array
    holdout: dict   # eval user -> sorted item array


@dataclass
class SyntheticSpec:
    """Planted-factor generator: disjoint item pools per factor, Dirichlet
    user affinities, interactions sampled factor-first then item."""

    n_users: int
    n_items: int
    n_factors: int
    affinity_concentration: float = 0.3
    interactions_low: int = 20
    interactions_high: int = 60
    extra_factor_prob: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.n_items < self.n_factors:
            raise DataError("need at least one item per factor")
        if self.interactions_low < 1 or self.interactions_high < self.interactions_low:
            raise DataError("bad interactions-per-user range")


def load_ratings(ratings_path, metadata_path) -> RawData:
    """Parse the two CSV inputs. Items missing from the metadata keep an
    empty factor set; metadata rows for unrated items are tolerated."""
    ratings_path, metadata_path = Path(ratings_path), Path(metadata_path)
    users, items, ratings = [], [], []
    with open(ratings_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{ratings_path}: empty file")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                users.append(int(row[0]))
                items.append(int(row[1]))
                ratings.append(float(row[2]))
            except (ValueError, IndexError) as exc:
                raise DataError(f"{ratings_path}:{lineno}: malformed row {row!r}") from exc
    if not users:
        raise DataError(f"{ratings_path}: no rating rows")

    titles, factors = {}, {}
    with open(metadata_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{metadata_path}: empty file")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                item_id = int(row[0])
                title = row[1]
                raw = row[2] if len(row) > 2 else ""
            except (ValueError, IndexError) as exc:
                raise DataError(f"{metadata_path}:{lineno}: malformed row {row!r}") from exc
            names = tuple(f for f in raw.split("|") if f and f != _NO_FACTORS)
            titles[item_id] = title
            factors[item_id] = names

    return RawData(user_ids=np.array(users, dtype=np.int64),
                   item_ids=np.array(items, dtype=np.int64),
                   ratings=np.array(ratings),
                   item_titles=titles, item_factors=factors)


def binarize_and_filter(raw: RawData, min_rating: float = 4.0,
                        min_interactions: int = 5,
                        n_factors: int | None = None) -> InteractionDataset:
    """Keep ratings >= min_rating as binary interactions, drop users below the
    interaction threshold, re-densify indices.

    `n_factors` optionally restricts the vocabulary to the N most frequent
    labels (tag-style signals); remaining labels are dropped from items.
    """
    keep = raw.ratings >= min_rating
    if not keep.any():
        raise DataError("binarization removed every interaction")
    users, items = raw.user_ids[keep], raw.item_ids[keep]

    pairs = {}
    for u, i in zip(users.tolist(), items.tolist()):
        pairs.setdefault(u, set()).add(i)
    kept_users = sorted(u for u, its in pairs.items() if len(its) >= min_interactions)
    if not kept_users:
        raise DataError(f"no user has >= {min_interactions} binary interactions")

    kept_items = sorted({i for u in kept_users for i in pairs[u]})
    item_index = {i: k for k, i in enumerate(kept_items)}

    label_counts = {}
    for i in kept_items:
        for name in raw.item_factors.get(i, ()):
            label_counts[name] = label_counts.get(name, 0) + 1
    if n_factors is not None:
        vocab = sorted(sorted(label_counts), key=lambda n: -label_counts[n])[:n_factors]
        vocab = sorted(vocab)
    else:
        vocab = sorted(label_counts)
    factor_index = {n: j for j, n in enumerate(vocab)}

    item_lists = [np.array(sorted(item_index[i] for i in pairs[u]), dtype=np.int64)
                  for u in kept_users]
    item_factors = [np.array(sorted(factor_index[n] for n in raw.item_factors.get(i, ())
                                    if n in factor_index), dtype=np.int64)
                    for i in kept_items]
    titles = [raw.item_titles.get(i, str(i)) for i in kept_items]

    return InteractionDataset(item_lists=item_lists, item_factors=item_factors,
                              factor_names=vocab, item_titles=titles,
                              raw_item_ids=np.array(kept_items, dtype=np.int64),
                              raw_user_ids=np.array(kept_users, dtype=np.int64))


def split_users(dataset: InteractionDataset, n_val_users: int, n_test_users: int,
                holdout_frac: float = 0.2, seed: int = 0) -> UserSplit:
    """Disjoint train/val/test user sets; eval users get a fold-in/holdout
    item partition with |holdout| = max(1, round(frac * |items|))."""
    u = dataset.n_users
    if n_val_users + n_test_users >= u:
        raise DataError(f"cannot hold out {n_val_users}+{n_test_users} of {u} users")
    rng = np.random.default_rng(seed)
    order = rng.permutation(u)
    val = np.sort(order[:n_val_users])
    test = np.sort(order[n_val_users:n_val_users + n_test_users])
    train = np.sort(order[n_val_users + n_test_users:])

    fold_in, holdout = {}, {}
    for user in np.concatenate([val, test]).tolist():
        items = dataset.item_lists[user]
        n_hold = max(1, round(holdout_frac * len(items)))
        held = rng.choice(items, size=n_hold, replace=False)
        holdout[user] = np.sort(held)
        fold_in[user] = np.setdiff1d(items, held)
    return UserSplit(train_users=train, val_users=val, test_users=test,
                     fold_in=fold_in, holdout=holdout)


def preference_distribution(dataset: InteractionDataset, users=None,
                            item_subsets: dict | None = None) -> np.ndarray:
    """Per-user fraction of items carrying each factor.

    Rows need not sum to 1: items can carry several factors (or none, in
    which case they still count toward the denominator).
    """
    if users is None:
        users = range(dataset.n_users)
    users = list(users)
    out = np.zeros((len(users), dataset.n_factors))
    for r, u in enumerate(users):
        items = item_subsets[u] if item_subsets is not None else dataset.item_lists[u]
        if len(items) == 0:
            raise DataError(f"user {u}: empty item subset")
        counts = np.zeros(dataset.n_factors)
        for i in items:
            fs = dataset.item_factors[i]
            counts[fs] += 1.0
        out[r] = counts / len(items)
    return out


def cooccurrence_profile(dataset: InteractionDataset, user: int, factor_j: int):
    """(g_easy, g_difficult) for a user and factor: the other factors least /
    most co-occurring with `factor_j` within the user's items.

    Factors the user has no items of rank below any factor they do have
    items of when picking g_easy; all ties break toward the lower index.
    """
    if dataset.n_factors < 3:
        raise DataError("need at least 2 factors besides the target")
    items = dataset.item_lists[user]
    cooc = np.zeros(dataset.n_factors)
    user_factor_items = np.zeros(dataset.n_factors)
    has_j = False
    for i in items:
        fs = dataset.item_factors[i]
        user_factor_items[fs] += 1.0
        if factor_j in fs:
            has_j = True
            cooc[fs] += 1.0
    if not has_j:
        raise DataError(f"user {user} has no item with factor {factor_j}")

    candidates = [f for f in range(dataset.n_factors) if f != factor_j]
    g_easy = min(candidates, key=lambda f: (user_factor_items[f] == 0, cooc[f], f))
    g_difficult = min(candidates, key=lambda f: (-cooc[f], f))
    return g_easy, g_difficult


def generate_synthetic(spec: SyntheticSpec):
    """Deterministic planted-factor dataset; returns (dataset, affinities)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    a = spec.n_factors

    primary = np.arange(spec.n_items) % a
    pools = [np.nonzero(primary == f)[0] for f in range(a)]
    item_factors = []
    for i in range(spec.n_items):
        fs = {int(primary[i])}
        if a > 1 and rng.random() < spec.extra_factor_prob:
            extra = int(rng.integers(a - 1))
            if extra >= primary[i]:
                extra += 1
            fs.add(extra)
        item_factors.append(np.array(sorted(fs), dtype=np.int64))

    affinity = rng.dirichlet(np.full(a, spec.affinity_concentration), size=spec.n_users) \
        if a > 1 else np.ones((spec.n_users, 1))
    item_lists = []
    for u in range(spec.n_users):
        n_u = int(rng.integers(spec.interactions_low, spec.interactions_high + 1))
        counts = rng.multinomial(n_u, affinity[u])
        chosen = []
        for f in range(a):
            c = min(int(counts[f]), len(pools[f]))
            if c:
                chosen.append(rng.choice(pools[f], size=c, replace=False))
        items = np.sort(np.concatenate(chosen)) if chosen else np.array([], dtype=np.int64)
        item_lists.append(items.astype(np.int64))

    dataset = InteractionDataset(
        item_lists=item_lists, item_factors=item_factors,
        factor_names=[f"factor_{f}" for f in range(a)],
        item_titles=[f"item_{i:05d}" for i in range(spec.n_items)])
    return dataset, affinity


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def write_dataset_csv(dataset: InteractionDataset, ratings_path, metadata_path,
                      affinities: np.ndarray | None = None,
                      sidecar_path=None) -> None:
    """Emit the two-file CSV shape (plus a ground-truth JSON sidecar for
    synthetic data)."""
    with open(ratings_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["userId", "itemId", "rating", "timestamp"])
        for u, items in enumerate(dataset.item_lists):
            for i in items.tolist():
                w.writerow([u, i, 5.0, 0])
    with open(metadata_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["itemId", "title", "factors"])
        for i, fs in enumerate(dataset.item_factors):
            title = dataset.item_titles[i] if dataset.item_titles else str(i)
            w.writerow([i, title, "|".join(dataset.factor_names[f] for f in fs.tolist())])
    if affinities is not None and sidecar_path is not None:
        with open(sidecar_path, "w", encoding="utf-8") as fh:
            json.dump({"factor_names": dataset.factor_names,
                       "affinities": affinities.tolist()}, fh)


def save_dataset(dataset: InteractionDataset, path) -> None:
    """Compact npz container for prepared artifacts."""
    user_ptr = np.cumsum([0] + [len(x) for x in dataset.item_lists])
    item_ptr = np.cumsum([0] + [len(x) for x in dataset.item_factors])
    np.savez_compressed(
        path,
        user_ptr=user_ptr,
        user_items=np.concatenate(dataset.item_lists) if dataset.n_users else np.array([], dtype=np.int64),
        item_ptr=item_ptr,
        item_factor_ids=np.concatenate(dataset.item_factors) if dataset.n_items else np.array([], dtype=np.int64),
        factor_names=np.array(dataset.factor_names, dtype=object),
        item_titles=np.array(dataset.item_titles if dataset.item_titles else [], dtype=object),
    )


def load_dataset(path) -> InteractionDataset:
    z = np.load(path, allow_pickle=True)
    user_ptr, item_ptr = z["user_ptr"], z["item_ptr"]
    items = z["user_items"]
    fids = z["item_factor_ids"]
    item_lists = [items[user_ptr[i]:user_ptr[i + 1]].astype(np.int64)
                  for i in range(len(user_ptr) - 1)]
    item_factors = [fids[item_ptr[i]:item_ptr[i + 1]].astype(np.int64)
                    for i in range(len(item_ptr) - 1)]
    titles = list(z["item_titles"]) or None
    return InteractionDataset(item_lists=item_lists, item_factors=item_factors,
                              factor_names=list(z["factor_names"]),
                              item_titles=titles)


def save_split(split: UserSplit, path) -> None:
    eval_users = np.array(sorted(split.fold_in), dtype=np.int64)
    fold_ptr = np.cumsum([0] + [len(split.fold_in[u]) for u in eval_users.tolist()])
    hold_ptr = np.cumsum([0] + [len(split.holdout[u]) for u in eval_users.tolist()])
    np.savez_compressed(
        path,
        train_users=split.train_users, val_users=split.val_users,
        test_users=split.test_users, eval_users=eval_users,
        fold_ptr=fold_ptr, hold_ptr=hold_ptr,
        fold_items=np.concatenate([split.fold_in[u] for u in eval_users.tolist()])
        if len(eval_users) else np.array([], dtype=np.int64),
        hold_items=np.concatenate([split.holdout[u] for u in eval_users.tolist()])
        if len(eval_users) else np.array([], dtype=np.int64),
    )


def load_split(path) -> UserSplit:
    z = np.load(path)
    eval_users = z["eval_users"]
    fold_ptr, hold_ptr = z["fold_ptr"], z["hold_ptr"]
    fold_in, holdout = {}, {}
    for k, u in enumerate(eval_users.tolist()):
        fold_in[u] = z["fold_items"][fold_ptr[k]:fold_ptr[k + 1]].astype(np.int64)
        holdout[u] = z["hold_items"][hold_ptr[k]:hold_ptr[k + 1]].astype(np.int64)
    return UserSplit(train_users=z["train_users"].astype(np.int64),
                     val_users=z["val_users"].astype(np.int64),
                     test_users=z["test_users"].astype(np.int64),
                     fold_in=fold_in, holdout=holdout)
