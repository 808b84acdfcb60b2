"""Rating-matrix types and the preprocessing operations.

Implements the dataset protocol: binarize explicit scores, iteratively drop
sparse users/items to a fixpoint, build item-item neighbor lists either from
a relation graph or from train-split rating similarity, and draw per-user
train/test partitions. Every operation is a pure function of its inputs and
an explicit seed.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DataError
from .seeding import seeded_rng


@dataclass
class SparseBinaryRatings:
    """Binary user-item interactions with both row and column access."""

    num_users: int
    num_items: int
    by_user: list[np.ndarray]
    by_item: list[np.ndarray]

    @classmethod
    def from_pairs(cls, pairs, num_users: int, num_items: int) -> "SparseBinaryRatings":
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        by_user: list[list[int]] = [[] for _ in range(num_users)]
        by_item: list[list[int]] = [[] for _ in range(num_items)]
        for u, i in pairs:
            if not (0 <= u < num_users and 0 <= i < num_items):
                raise DataError(
                    f"pair ({u}, {i}) out of range ({num_users} users, {num_items} items)"
                )
            by_user[u].append(i)
            by_item[i].append(u)
        return cls(
            num_users=num_users,
            num_items=num_items,
            by_user=[np.unique(np.array(v, dtype=np.int64)) for v in by_user],
            by_item=[np.unique(np.array(v, dtype=np.int64)) for v in by_item],
        )

    def num_pairs(self) -> int:
        return int(sum(len(v) for v in self.by_user))

    def pairs(self) -> np.ndarray:
        """All (user, item) pairs sorted by (user, item)."""
        chunks = [
            np.stack([np.full(len(items), u, dtype=np.int64), items], axis=1)
            for u, items in enumerate(self.by_user)
            if len(items)
        ]
        if not chunks:
            return np.empty((0, 2), dtype=np.int64)
        return np.concatenate(chunks, axis=0)

    def validate(self) -> None:
        from_users = {(u, int(i)) for u, items in enumerate(self.by_user) for i in items}
        from_items = {(int(u), i) for i, users in enumerate(self.by_item) for u in users}
        if from_users != from_items:
            raise DataError("by_user and by_item encode different pair sets")


@dataclass
class NeighborGraph:
    """Per-item sorted neighbor-id lists; no self loops."""

    neighbors: list[np.ndarray]

    @property
    def num_items(self) -> int:
        return len(self.neighbors)

    def degree_histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for lst in self.neighbors:
            hist[len(lst)] = hist.get(len(lst), 0) + 1
        return hist

    def validate(self) -> None:
        n = self.num_items
        for i, lst in enumerate(self.neighbors):
            if len(lst) and (lst.min() < 0 or lst.max() >= n):
                raise DataError(f"item {i} has out-of-range neighbor ids")
            if i in lst:
                raise DataError(f"item {i} has a self loop")
            if len(np.unique(lst)) != len(lst):
                raise DataError(f"item {i} has duplicate neighbors")

    @classmethod
    def empty(cls, num_items: int) -> "NeighborGraph":
        return cls([np.empty(0, dtype=np.int64) for _ in range(num_items)])


@dataclass
class DataSplit:
    """Per-user train/test partition of a rating set."""

    train: SparseBinaryRatings
    test: list[np.ndarray]
    seed: int
    fold_index: int

    @property
    def num_users(self) -> int:
        return self.train.num_users

    @property
    def num_items(self) -> int:
        return self.train.num_items


def binarize_ratings(triples, threshold: float = 4.0) -> list[tuple]:
    """Keep (user, item) for scores >= threshold; score None means pre-binarized."""
    kept = []
    for user, item, score in triples:
        if score is None or float(score) >= threshold:
            kept.append((user, item))
    return kept


def filter_sparse(
    pairs,
    min_user_ratings: int = 10,
    min_item_ratings: int = 5,
) -> tuple[np.ndarray, list, list]:
    """Iteratively drop users with too few and items with too few interactions.

    Repeats until a fixpoint, then remaps surviving ids densely (sorted by the
    original id). Returns (dense (P, 2) pairs, kept user ids, kept item ids).
    """
    pair_set = set(pairs)
    while True:
        user_counts: dict = {}
        item_counts: dict = {}
        for u, i in pair_set:
            user_counts[u] = user_counts.get(u, 0) + 1
            item_counts[i] = item_counts.get(i, 0) + 1
        bad_users = {u for u, c in user_counts.items() if c < min_user_ratings}
        bad_items = {i for i, c in item_counts.items() if c < min_item_ratings}
        if not bad_users and not bad_items:
            break
        pair_set = {(u, i) for u, i in pair_set if u not in bad_users and i not in bad_items}
    if not pair_set:
        raise DataError(
            "no interactions survive filtering; relax min_user_ratings/min_item_ratings"
        )
    users = sorted({u for u, _ in pair_set})
    items = sorted({i for _, i in pair_set})
    user_index = {u: k for k, u in enumerate(users)}
    item_index = {i: k for k, i in enumerate(items)}
    dense = np.array(
        sorted((user_index[u], item_index[i]) for u, i in pair_set), dtype=np.int64
    )
    return dense, users, items


def build_neighbors_from_adjacency(edges, num_items: int) -> NeighborGraph:
    """Symmetrize, deduplicate, and drop self loops from raw (i, j) edges."""
    sets: list[set[int]] = [set() for _ in range(num_items)]
    for i, j in edges:
        i, j = int(i), int(j)
        if not (0 <= i < num_items and 0 <= j < num_items):
            raise DataError(f"edge ({i}, {j}) out of range for {num_items} items")
        if i == j:
            continue
        sets[i].add(j)
        sets[j].add(i)
    return NeighborGraph([np.array(sorted(s), dtype=np.int64) for s in sets])


def item_similarity_matrix(train: SparseBinaryRatings, metric: str = "cosine") -> sp.csr_matrix:
    """Sparse item-item similarity from binary rating columns (train only)."""
    if train.num_pairs() == 0:
        raise DataError("cannot compute similarities from an empty rating set")
    rows, cols = [], []
    for i, users in enumerate(train.by_item):
        rows.extend([i] * len(users))
        cols.extend(users)
    mat = sp.csr_matrix(
        (np.ones(len(rows)), (rows, cols)),
        shape=(train.num_items, train.num_users),
    )
    co = (mat @ mat.T).tocoo()
    deg = np.asarray(mat.sum(axis=1)).ravel()
    i, j, overlap = co.row, co.col, co.data
    if metric == "cosine":
        denom = np.sqrt(deg[i] * deg[j])
    elif metric == "jaccard":
        denom = deg[i] + deg[j] - overlap
    else:
        raise DataError(f"unknown similarity metric {metric!r}")
    with np.errstate(divide="ignore", invalid="ignore"):
        sim = np.where(denom > 0, overlap / denom, 0.0)
    return sp.csr_matrix((sim, (i, j)), shape=co.shape)


def build_neighbors_from_similarity(
    train: SparseBinaryRatings,
    threshold: float = 0.2,
    max_neighbors: int = 50,
    metric: str = "cosine",
) -> NeighborGraph:
    """Neighbors = pairs with similarity >= threshold, capped per item, symmetrized.

    Per item the `max_neighbors` highest-similarity candidates are kept (ties
    broken by ascending item id), then lists are union-symmetrized so the
    relation stays mutual; the union step may push popular items past the cap.
    """
    sim = item_similarity_matrix(train, metric=metric).tocoo()
    candidates: list[list[tuple[float, int]]] = [[] for _ in range(train.num_items)]
    for i, j, s in zip(sim.row, sim.col, sim.data):
        if i != j and s >= threshold:
            candidates[i].append((float(s), int(j)))
    sets: list[set[int]] = [set() for _ in range(train.num_items)]
    for i, cand in enumerate(candidates):
        cand.sort(key=lambda pair: (-pair[0], pair[1]))
        for _, j in cand[:max_neighbors]:
            sets[i].add(j)
            sets[j].add(i)
    return NeighborGraph([np.array(sorted(s), dtype=np.int64) for s in sets])


def held_out_count(num_rated: int, test_frac: float) -> int:
    # round-half-up; exact halves cannot occur at frac 0.2
    return int(np.floor(test_frac * num_rated + 0.5))


def split_per_user(
    ratings: SparseBinaryRatings,
    test_frac: float = 0.2,
    seed: int = 0,
    fold_index: int = 0,
) -> DataSplit:
    """Hold out round(test_frac * |rated|) items per user, deterministically.

    Each user draws from their own child RNG keyed on (seed, fold, user), so
    the split is independent of iteration order.
    """
    if not 0.0 < test_frac < 1.0:
        raise DataError(f"test_frac must be in (0, 1), got {test_frac}")
    test_sets: list[np.ndarray] = []
    train_pairs: list[np.ndarray] = []
    for u, items in enumerate(ratings.by_user):
        if len(items) == 0:
            test_sets.append(np.empty(0, dtype=np.int64))
            continue
        if len(items) < 2:
            raise DataError(f"user {u} has fewer than 2 ratings; filter first")
        k = held_out_count(len(items), test_frac)
        rng = seeded_rng(seed, "split", fold_index, u)
        perm = rng.permutation(items)
        held = np.sort(perm[:k])
        kept = np.sort(perm[k:])
        test_sets.append(held)
        if len(kept):
            train_pairs.append(np.stack([np.full(len(kept), u, dtype=np.int64), kept], axis=1))
    train = SparseBinaryRatings.from_pairs(
        np.concatenate(train_pairs, axis=0) if train_pairs else np.empty((0, 2), dtype=np.int64),
        ratings.num_users,
        ratings.num_items,
    )
    return DataSplit(train=train, test=test_sets, seed=seed, fold_index=fold_index)


def make_folds(
    ratings: SparseBinaryRatings,
    n_folds: int = 5,
    test_frac: float = 0.2,
    seed: int = 0,
) -> list[DataSplit]:
    return [split_per_user(ratings, test_frac, seed, fold) for fold in range(n_folds)]
