import math

import numpy as np
import pytest

from dgre.core.exceptions import EvaluationError
from dgre.services.dataset import leave_one_out_split
from dgre.services.evaluation import (
    RESULT_COLUMNS,
    evaluate,
    hr_at_k,
    metrics_frame,
    ndcg_at_k,
    rank_candidates,
    write_table,
)
from dgre.workers.executor import StageExecutor


@pytest.fixture
def small_split(make_dataset):
    rows = []
    for user, market in ((1, "de"), (2, "de"), (3, "de"), (4, "jp"), (5, "jp")):
        for step in range(3):
            rows.append((market, user, (user * 3 + step) % 20, step))
    rows.append(("de", 1, 19, 0))
    return leave_one_out_split(make_dataset(rows))


def _oracle(split):
    held_out = {case.user: case.item for case in split.test}
    return lambda user, items: np.array([1.0 if item == held_out[user] else 0.0 for item in items])


class TestRanking:

    def test_best_score_is_rank_one(self):
        scorer = lambda user, items: np.array([0.9, 0.1, 0.2, 0.3])
        assert rank_candidates(scorer, 1, 5, [6, 7, 8]) == 1

    def test_rank_counts_higher_negatives(self):
        scorer = lambda user, items: np.array([0.5, 0.9, 0.1, 0.7])
        assert rank_candidates(scorer, 1, 5, [6, 7, 8]) == 3

    def test_ties_are_pessimistic(self):
        scorer = lambda user, items: np.full(len(items), 0.5)
        assert rank_candidates(scorer, 1, 0, list(range(1, 100))) == 100

    def test_duplicate_candidates(self):
        with pytest.raises(EvaluationError):
            rank_candidates(lambda user, items: np.zeros(len(items)), 1, 5, [6, 5])


class TestMetrics:

    def test_hit_ratio(self):
        assert hr_at_k(1, 10) == 1
        assert hr_at_k(10, 10) == 1
        assert hr_at_k(11, 10) == 0

    def test_ndcg(self):
        assert ndcg_at_k(1, 10) == 1.0
        assert ndcg_at_k(3, 10) == pytest.approx(0.5)
        assert ndcg_at_k(11, 10) == 0.0

    def test_ndcg_bounded_by_hit_ratio(self):
        for rank in range(1, 30):
            assert 0.0 <= ndcg_at_k(rank, 10) <= hr_at_k(rank, 10)

    def test_invalid_rank(self):
        with pytest.raises(EvaluationError):
            hr_at_k(0, 10)
        with pytest.raises(EvaluationError):
            ndcg_at_k(0, 10)

    def test_random_instances_match_direct_formulas(self):
        rng = np.random.default_rng(21)
        for _ in range(200):
            n_neg = int(rng.integers(1, 40))
            k = int(rng.integers(1, 15))
            scores = rng.integers(0, 6, size=n_neg + 1).astype(float)
            rank = rank_candidates(lambda user, items: scores, 1, 0, list(range(1, n_neg + 1)))

            expected_rank = 1 + sum(1 for s in scores[1:] if s >= scores[0])
            assert rank == expected_rank
            expected_hr = 1 if expected_rank <= k else 0
            expected_ndcg = 1.0 / math.log2(expected_rank + 1) if expected_rank <= k else 0.0
            assert hr_at_k(rank, k) == expected_hr
            assert abs(ndcg_at_k(rank, k) - expected_ndcg) < 1e-10
            assert 0.0 <= ndcg_at_k(rank, k) <= hr_at_k(rank, k) <= 1


class TestEvaluate:

    def test_oracle_scorer(self, small_split):
        metrics = evaluate(_oracle(small_split), small_split, k=1, n_neg=5, seed=3)
        assert metrics.overall.hr_at_k == 1.0
        assert metrics.overall.ndcg_at_k == 1.0
        assert metrics.overall.n_users == 5
        assert metrics.per_market["de"].n_users == 3
        assert metrics.per_market["jp"].n_users == 2

    def test_constant_scorer(self, small_split):
        constant = lambda user, items: np.zeros(len(items))
        metrics = evaluate(constant, small_split, k=5, n_neg=5, seed=3)
        assert metrics.overall.hr_at_k == 0.0
        metrics = evaluate(constant, small_split, k=6, n_neg=5, seed=3)
        assert metrics.overall.hr_at_k == 1.0
        assert metrics.overall.ndcg_at_k == pytest.approx(1.0 / math.log2(7))

    def test_target_markets_and_omissions(self, small_split):
        metrics = evaluate(_oracle(small_split), small_split, k=1, n_neg=5, target_markets=["jp", "fr"])
        assert list(metrics.per_market) == ["jp"]
        assert metrics.omitted_markets == ["fr"]
        assert metrics.overall.n_users == 2

    def test_negatives_independent_of_threads(self, small_split):
        seen = {}

        def recording(user, items):
            seen.setdefault(user, []).append(tuple(items))
            return np.arange(len(items), dtype=np.float64)

        serial = evaluate(recording, small_split, k=3, n_neg=5, seed=1)
        first = dict(seen)
        seen.clear()
        threaded = evaluate(recording, small_split, k=3, n_neg=5, seed=1, executor=StageExecutor(3))
        assert seen == first
        assert serial == threaded

    def test_negatives_exclude_train_and_held_out(self, small_split):
        held_out = {case.user: case.item for case in small_split.test}
        user_items = small_split.train.user_items

        def checking(user, items):
            negatives = set(items[1:])
            assert items[0] == held_out[user]
            assert held_out[user] not in negatives
            assert not negatives & set(int(item) for item in user_items[user])
            assert len(negatives) == 5
            return np.zeros(len(items))

        evaluate(checking, small_split, k=1, n_neg=5, seed=8)


def test_results_table(tmp_path, small_split):
    metrics = evaluate(_oracle(small_split), small_split, k=1, n_neg=5)
    frame = metrics_frame(metrics)
    assert list(frame.columns) == RESULT_COLUMNS
    assert list(frame["market"]) == ["de", "de", "jp", "jp", "all", "all"]
    assert list(frame["metric"]) == ["hr", "ndcg"] * 3
    path = tmp_path / "results.tsv"
    write_table(frame, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "\t".join(RESULT_COLUMNS)
    assert lines[1] == "de\thr\t1\t1\t3"


def test_random_scorer_hit_ratio(make_dataset):
    rows = [("de", user, (user + step) % 120, step) for user in range(1000) for step in range(3)]
    split = leave_one_out_split(make_dataset(rows))

    def random_scores(user, items):
        return np.random.default_rng([7, user]).random(len(items))

    metrics = evaluate(random_scores, split, k=10, n_neg=99, seed=0)
    sigma = math.sqrt(0.1 * 0.9 / 1000)
    assert abs(metrics.overall.hr_at_k - 0.1) < 3 * sigma
