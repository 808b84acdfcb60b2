"""Top-k ranking metrics over full reconstruction scores.

Scores for every user/item pair come from the same forward pass used in
training; a user's train items are excluded from their candidate list before
top-k selection. Ties are broken by ascending item id so results never depend
on storage order or platform. Top-k extraction uses partial selection with
explicit boundary-tie resolution; equivalence with a brute-force full sort is
asserted by the test suite.
"""

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import NeighborGraph, SparseBinaryRatings
from .errors import ConfigError, DataError
from .model import GateModel, ModelHyper
from .params import ParameterSet

_SCORE_CHUNK = 512


def worker_threads() -> int:
    """Worker bound for scoring, from the GATE_THREADS environment variable."""
    raw = os.environ.get("GATE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"GATE_THREADS must be an integer, got {raw!r}") from None


@dataclass
class ScoreSink:
    """Per-user candidate scores with train-item exclusion sets."""

    scores: np.ndarray  # (num_users, num_items)
    excluded: list[np.ndarray]  # per user, sorted item ids

    @property
    def num_users(self) -> int:
        return self.scores.shape[0]

    @property
    def num_items(self) -> int:
        return self.scores.shape[1]


def score_all(
    params: ParameterSet,
    train: SparseBinaryRatings,
    corpus,
    graph: NeighborGraph | None,
    hyper: ModelHyper,
    threads: int | None = None,
) -> ScoreSink:
    """Run the full forward for every item and assemble the user-major matrix."""
    model = GateModel(hyper)
    if hyper.num_users != train.num_users or hyper.num_items != train.num_items:
        raise ConfigError("parameter/model shape does not match the rating data")
    tokens = [np.asarray(d, dtype=np.int64) for d in corpus.docs] if hyper.uses_words else None
    _, _, _, _, z_fused = model.representations(params, train.by_item, tokens)
    n = hyper.num_items
    scores = np.empty((hyper.num_users, n), dtype=np.float64)

    def fill(lo: int) -> None:
        hi = min(lo + _SCORE_CHUNK, n)
        ids = np.arange(lo, hi)
        z_nbr = None
        if hyper.uses_neighbors:
            _, _, z_nbr = model.neighbor_pool(
                params, z_fused, ids, [graph.neighbors[i] for i in ids]
            )
        _, _, r_hat = model.decode_batch(params, z_fused[ids], z_nbr)
        scores[:, lo:hi] = r_hat.T

    starts = list(range(0, n, _SCORE_CHUNK))
    threads = worker_threads() if threads is None else max(1, threads)
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, starts))
    else:
        for lo in starts:
            fill(lo)
    if not np.all(np.isfinite(scores)):
        raise DataError("non-finite scores produced during evaluation")
    return ScoreSink(scores=scores, excluded=list(train.by_user))


def top_k_items(scores_row: np.ndarray, excluded: np.ndarray, k: int) -> np.ndarray:
    """Highest-k items by score (ties by ascending id), never excluded ones."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    s = np.asarray(scores_row, dtype=np.float64).copy()
    s[excluded] = -np.inf
    n = len(s)
    k = min(k, n - len(excluded))
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    kth = np.partition(s, n - k)[n - k]
    cand = np.flatnonzero(s >= kth)
    order = np.lexsort((cand, -s[cand]))
    return cand[order[:k]].astype(np.int64)


def _user_hits(top: np.ndarray, test_items: np.ndarray) -> np.ndarray:
    return np.isin(top, test_items)


def _dcg(hits: np.ndarray) -> float:
    if not len(hits):
        return 0.0
    positions = np.arange(1, len(hits) + 1, dtype=np.float64)
    return float((hits / np.log2(positions + 1.0)).sum())


def ranking_metrics(
    sink: ScoreSink, test_sets: list[np.ndarray], ks: list[int]
) -> dict[int, tuple[float, float]]:
    """(recall, ndcg) per k, averaged over users with non-empty test sets."""
    ks = sorted(set(int(k) for k in ks))
    if not ks or ks[0] < 1:
        raise ValueError(f"invalid k list {ks}")
    kmax = ks[-1]
    recall_sums = {k: 0.0 for k in ks}
    ndcg_sums = {k: 0.0 for k in ks}
    counted = 0
    for u, test_items in enumerate(test_sets):
        if len(test_items) == 0:
            continue
        counted += 1
        top = top_k_items(sink.scores[u], sink.excluded[u], kmax)
        hits = _user_hits(top, test_items)
        for k in ks:
            head = hits[:k]
            recall_sums[k] += head.sum() / len(test_items)
            ideal = _dcg(np.ones(min(len(test_items), k)))
            ndcg_sums[k] += _dcg(head.astype(np.float64)) / ideal
    if counted == 0:
        raise DataError("no users with a non-empty test set")
    return {k: (recall_sums[k] / counted, ndcg_sums[k] / counted) for k in ks}


def recall_at_k(sink: ScoreSink, test_sets: list[np.ndarray], k: int) -> float:
    return ranking_metrics(sink, test_sets, [k])[k][0]


def ndcg_at_k(sink: ScoreSink, test_sets: list[np.ndarray], k: int) -> float:
    return ranking_metrics(sink, test_sets, [k])[k][1]


@dataclass
class FoldMetrics:
    fold: int
    num_users: int
    recall: dict[int, float]
    ndcg: dict[int, float]


@dataclass
class MetricReport:
    ks: list[int]
    folds: list[FoldMetrics]
    mean_recall: dict[int, float] = field(default_factory=dict)
    mean_ndcg: dict[int, float] = field(default_factory=dict)
    config_fingerprint: str = ""
    dataset_fingerprint: str = ""

    def validate(self) -> None:
        for fold in self.folds:
            for k in self.ks:
                for value in (fold.recall[k], fold.ndcg[k]):
                    if not 0.0 <= value <= 1.0:
                        raise DataError(f"metric out of [0, 1]: {value}")


def evaluate_fold(
    params: ParameterSet,
    split,
    corpus,
    graph: NeighborGraph | None,
    hyper: ModelHyper,
    ks=(5, 10, 15, 20),
    threads: int | None = None,
) -> FoldMetrics:
    sink = score_all(params, split.train, corpus, graph, hyper, threads=threads)
    metrics = ranking_metrics(sink, split.test, list(ks))
    users = sum(1 for t in split.test if len(t))
    return FoldMetrics(
        fold=split.fold_index,
        num_users=users,
        recall={k: metrics[k][0] for k in metrics},
        ndcg={k: metrics[k][1] for k in metrics},
    )


def aggregate_folds(folds: list[FoldMetrics], ks, expected: int = 5) -> MetricReport:
    """Arithmetic mean per metric per k; warns when fold count is off-protocol."""
    if not folds:
        raise DataError("no fold metrics to aggregate")
    ks = sorted(set(int(k) for k in ks))
    for fold in folds:
        if sorted(fold.recall) != ks or sorted(fold.ndcg) != ks:
            raise DataError("fold metric k-grids differ")
    if len(folds) != expected:
        warnings.warn(
            f"aggregating {len(folds)} folds (protocol uses {expected})", stacklevel=2
        )
    report = MetricReport(ks=ks, folds=list(folds))
    report.mean_recall = {k: float(np.mean([f.recall[k] for f in folds])) for k in ks}
    report.mean_ndcg = {k: float(np.mean([f.ndcg[k] for f in folds])) for k in ks}
    report.validate()
    return report
