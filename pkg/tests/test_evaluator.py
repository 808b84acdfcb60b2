import numpy as np
import pytest

from gaterec.data import DataSplit, SparseBinaryRatings
from gaterec.errors import DataError
from gaterec.evaluator import (
    FoldMetrics,
    ScoreSink,
    aggregate_folds,
    evaluate_fold,
    ndcg_at_k,
    ranking_metrics,
    recall_at_k,
    score_all,
    top_k_items,
)
from gaterec.model import GateModel, ModelHyper, forward_item, init_parameters

from conftest import toy_corpus, toy_graph, toy_hyper, toy_ratings


def _sink(scores, excluded=None):
    scores = np.asarray(scores, dtype=np.float64)
    if excluded is None:
        excluded = [np.empty(0, dtype=np.int64) for _ in range(scores.shape[0])]
    return ScoreSink(scores=scores, excluded=excluded)


class TestTopK:
    def test_exclusion_and_tie_break(self):
        scores = np.array([0.9, 0.8, 0.7, 0.6, 0.5])
        top = top_k_items(scores, np.array([0]), 2)
        assert top.tolist() == [1, 2]

    def test_ties_broken_by_ascending_id(self):
        scores = np.array([0.5, 0.7, 0.5, 0.7, 0.1])
        top = top_k_items(scores, np.empty(0, dtype=np.int64), 3)
        assert top.tolist() == [1, 3, 0]

    def test_matches_brute_force_full_sort_with_ties(self):
        rng = np.random.default_rng(21)
        for _ in range(200):
            n = int(rng.integers(2, 51))
            # discrete score levels force plenty of ties
            scores = rng.choice(np.linspace(-1, 1, 7), size=n)
            excluded = np.flatnonzero(rng.random(n) < 0.3)
            if len(excluded) == n:
                excluded = excluded[:-1]
            k = int(rng.integers(1, n + 1))
            fast = top_k_items(scores, excluded, k)
            banned = set(excluded.tolist())
            oracle = sorted(
                (i for i in range(n) if i not in banned),
                key=lambda i: (-scores[i], i),
            )[:k]
            assert fast.tolist() == oracle

    def test_excluded_never_emitted(self):
        rng = np.random.default_rng(22)
        for _ in range(50):
            scores = rng.normal(size=30)
            excluded = np.sort(rng.choice(30, size=10, replace=False))
            top = top_k_items(scores, excluded, 20)
            assert not set(top.tolist()) & set(excluded.tolist())


class TestRecall:
    def test_hand_checked_case(self):
        # 5 items, scores .9/.8/.7/.6/.5, train {0} excluded, k=2 -> top {1,2}
        sink = _sink([[0.9, 0.8, 0.7, 0.6, 0.5]], [np.array([0])])
        assert recall_at_k(sink, [np.array([2, 4])], 2) == pytest.approx(0.5)

    def test_perfect_when_test_fits_in_k(self):
        sink = _sink([[0.9, 0.8, 0.1, 0.0]])
        assert recall_at_k(sink, [np.array([0, 1])], 3) == pytest.approx(1.0)

    def test_zero_when_no_hits(self):
        sink = _sink([[0.9, 0.8, 0.1, 0.0]])
        assert recall_at_k(sink, [np.array([3])], 2) == pytest.approx(0.0)

    def test_monotone_in_k(self):
        rng = np.random.default_rng(23)
        scores = rng.normal(size=(6, 40))
        sink = _sink(scores)
        tests = [np.sort(rng.choice(40, size=5, replace=False)) for _ in range(6)]
        values = [recall_at_k(sink, tests, k) for k in (1, 3, 5, 10, 20, 40)]
        assert values == sorted(values)
        assert values[-1] == pytest.approx(1.0)

    def test_no_testable_users_raises(self):
        sink = _sink([[0.5, 0.4]])
        with pytest.raises(DataError):
            recall_at_k(sink, [np.empty(0, dtype=np.int64)], 1)


class TestNdcg:
    def test_perfect_ranking_is_one(self):
        sink = _sink([[0.9, 0.8, 0.1, 0.05]])
        assert ndcg_at_k(sink, [np.array([0, 1])], 2) == pytest.approx(1.0)

    def test_no_hits_zero(self):
        sink = _sink([[0.9, 0.8, 0.1, 0.05]])
        assert ndcg_at_k(sink, [np.array([2])], 2) == pytest.approx(0.0)

    def test_single_item_at_rank_two(self):
        sink = _sink([[0.9, 0.8, 0.1, 0.05]])
        expected = 1.0 / np.log2(3.0)
        assert ndcg_at_k(sink, [np.array([1])], 2) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.6309, abs=1e-4)

    def test_matches_brute_force_definition(self):
        rng = np.random.default_rng(24)
        for _ in range(50):
            n = int(rng.integers(5, 50))
            scores = rng.normal(size=n)
            test_items = np.sort(rng.choice(n, size=int(rng.integers(1, 5)), replace=False))
            k = int(rng.integers(1, 21))
            sink = _sink([scores])
            got = ndcg_at_k(sink, [test_items], k)
            order = sorted(range(n), key=lambda i: (-scores[i], i))[:k]
            dcg = sum(
                1.0 / np.log2(pos + 2.0)
                for pos, item in enumerate(order)
                if item in set(test_items.tolist())
            )
            idcg = sum(1.0 / np.log2(pos + 2.0) for pos in range(min(len(test_items), k)))
            assert got == pytest.approx(dcg / idcg, abs=1e-12)

    def test_bounded_by_one(self):
        rng = np.random.default_rng(25)
        for _ in range(30):
            scores = rng.normal(size=(3, 25))
            sink = _sink(scores)
            tests = [np.sort(rng.choice(25, size=4, replace=False)) for _ in range(3)]
            for k in (1, 5, 10):
                value = ndcg_at_k(sink, tests, k)
                assert 0.0 <= value <= 1.0


class TestScoreAll:
    def test_sink_matches_per_item_forward(self, toy_setup):
        hyper, params, ratings, corpus, graph = toy_setup
        model = GateModel(hyper)
        sink = score_all(params, ratings, corpus, graph, hyper)
        tokens = [np.asarray(d) for d in corpus.docs]
        _, _, _, _, z_fused = model.representations(params, ratings.by_item, tokens)
        dense = np.zeros((hyper.num_items, hyper.num_users))
        for i, users in enumerate(ratings.by_item):
            dense[i, users] = 1.0
        for i in range(hyper.num_items):
            trace = forward_item(
                params, hyper, dense[i], np.array(corpus.docs[i]),
                z_fused[graph.neighbors[i]],
            )
            assert np.allclose(sink.scores[:, i], trace.r_hat, atol=1e-12)

    def test_deterministic_and_thread_invariant(self, toy_setup):
        hyper, params, ratings, corpus, graph = toy_setup
        a = score_all(params, ratings, corpus, graph, hyper, threads=1)
        b = score_all(params, ratings, corpus, graph, hyper, threads=4)
        assert np.array_equal(a.scores, b.scores)

    def test_untrained_params_near_random_baseline(self):
        # wider synthetic: with untrained weights the ranking carries no signal
        # about the held-out items, so recall ~ k/n in expectation
        rng = np.random.default_rng(26)
        num_users, num_items = 60, 40
        pairs = [
            (u, i)
            for u in range(num_users)
            for i in rng.choice(num_items, size=10, replace=False)
        ]
        ratings = SparseBinaryRatings.from_pairs(np.array(pairs), num_users, num_items)
        hyper = toy_hyper(
            num_users=num_users, num_items=num_items, ablation="ae_only", l2_reg=0.0
        )
        params = init_parameters(hyper, seed=0)
        sink = score_all(params, ratings, None, None, hyper)
        tests = [np.sort(rng.choice(num_items, size=3, replace=False)) for _ in range(num_users)]
        sink.excluded = [np.empty(0, dtype=np.int64)] * num_users
        k = 10
        recall = recall_at_k(sink, tests, k)
        baseline = k / num_items
        assert 0.3 * baseline < recall < 2.5 * baseline


class TestAggregate:
    def _fold(self, fold, value):
        return FoldMetrics(
            fold=fold, num_users=10, recall={10: value}, ndcg={10: value / 2}
        )

    def test_identical_folds_mean_equals_each(self):
        report = aggregate_folds([self._fold(k, 0.3) for k in range(5)], ks=[10])
        assert report.mean_recall[10] == pytest.approx(0.3)
        assert report.mean_ndcg[10] == pytest.approx(0.15)

    def test_hand_mean(self):
        values = [0.1, 0.2, 0.3, 0.2, 0.2]
        report = aggregate_folds(
            [self._fold(k, v) for k, v in enumerate(values)], ks=[10]
        )
        assert report.mean_recall[10] == pytest.approx(0.2)

    def test_order_invariant(self):
        values = [0.1, 0.2, 0.3, 0.2, 0.2]
        folds = [self._fold(k, v) for k, v in enumerate(values)]
        a = aggregate_folds(folds, ks=[10])
        b = aggregate_folds(folds[::-1], ks=[10])
        assert a.mean_recall[10] == pytest.approx(b.mean_recall[10], abs=1e-15)

    def test_warns_on_unexpected_fold_count(self):
        with pytest.warns(UserWarning, match="3 folds"):
            aggregate_folds([self._fold(k, 0.1) for k in range(3)], ks=[10])


class TestEvaluateFold:
    def test_full_flow_on_toy(self, toy_setup):
        hyper, params, ratings, corpus, graph = toy_setup
        test_sets = [np.empty(0, dtype=np.int64) for _ in range(hyper.num_users)]
        test_sets[0] = np.array([3])
        split = DataSplit(train=ratings, test=test_sets, seed=0, fold_index=2)
        metrics = evaluate_fold(params, split, corpus, graph, hyper, ks=(1, 2, 4))
        assert metrics.fold == 2
        assert metrics.num_users == 1
        assert set(metrics.recall) == {1, 2, 4}
