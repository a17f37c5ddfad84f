import numpy as np
import pandas as pd
import pytest

from dgre.config import SynthConfig
from dgre.core.exceptions import (
    DataParseError,
    DataValidationError,
    InsufficientCandidatesError,
    MissingArtifactError,
    SplitError,
    SynthesisError,
    UnknownMarketError,
)
from dgre.services.dataset import (
    filter_min_interactions,
    generate_synthetic,
    leave_one_out_split,
    load_interactions,
    planted_groups,
    read_split,
    sample_negatives,
    write_split,
)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestLoadInteractions:

    def test_three_lines_two_markets(self, tmp_path):
        path = _write(tmp_path / "data.tsv", "de\t1\t10\t1\t100\nde\t2\t11\t1\t101\njp\t3\t10\t1\t102\n")
        ds = load_interactions(path)
        assert ds.markets == ("de", "jp")
        assert ds.all_users == (1, 2, 3)
        assert ds.users["de"] == frozenset({1, 2})

    def test_empty_file(self, tmp_path):
        ds = load_interactions(_write(tmp_path / "empty.tsv", ""))
        assert len(ds) == 0
        assert ds.markets == ()

    def test_duplicate_pair_keeps_earliest(self, tmp_path):
        path = _write(tmp_path / "dup.tsv", "de\t1\t10\t1\t5\nde\t1\t10\t1\t3\nde\t1\t11\t1\t4\n")
        ds = load_interactions(path)
        assert len(ds) == 2
        row = ds.interactions[(ds.interactions["user"] == 1) & (ds.interactions["item"] == 10)]
        assert int(row["timestamp"].iloc[0]) == 3

    def test_header_is_skipped(self, tmp_path):
        path = _write(tmp_path / "h.tsv", "market\tuser_id\titem_id\trating\ttimestamp\nde\t1\t10\t5\t1\n")
        assert len(load_interactions(path)) == 1

    def test_any_rating_counts_as_interaction(self, tmp_path):
        path = _write(tmp_path / "r.tsv", "de\t1\t10\t0\t1\nde\t1\t11\t\t2\n")
        assert len(load_interactions(path)) == 2

    def test_malformed_value_names_line(self, tmp_path):
        path = _write(tmp_path / "bad.tsv", "de\t1\t10\t1\t1\nde\t2\tabc\t1\t2\n")
        with pytest.raises(DataParseError, match="line 2") as exc:
            load_interactions(path)
        assert exc.value.line == 2

    def test_wrong_field_count(self, tmp_path):
        with pytest.raises(DataParseError):
            load_interactions(_write(tmp_path / "bad.tsv", "de\t1\t10\n"))

    def test_unknown_market(self, tmp_path):
        with pytest.raises(UnknownMarketError):
            load_interactions(_write(tmp_path / "m.tsv", "DE!\t1\t10\t1\t1\n"))

    def test_market_outside_allowed_list(self, tmp_path):
        path = _write(tmp_path / "m.tsv", "de\t1\t10\t1\t1\nfr\t2\t10\t1\t1\n")
        with pytest.raises(UnknownMarketError, match="fr"):
            load_interactions(path, markets=["de"])

    def test_user_in_two_markets(self, tmp_path):
        path = _write(tmp_path / "m.tsv", "de\t1\t10\t1\t1\njp\t1\t11\t1\t1\n")
        with pytest.raises(DataValidationError, match="more than one market"):
            load_interactions(path)

    def test_missing_path(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            load_interactions(str(tmp_path / "nope.tsv"))

    def test_per_market_directory(self, tmp_path):
        _write(tmp_path / "de.tsv", "1\t10\t1\t1\n2\t10\t1\t2\n")
        _write(tmp_path / "jp.tsv", "3\t11\t1\t1\n")
        ds = load_interactions(str(tmp_path), fmt="per_market")
        assert set(ds.markets) == {"de", "jp"}
        assert ds.user_market[3] == "jp"

    def test_timestamp_column_is_optional(self, tmp_path):
        path = _write(tmp_path / "t.tsv", "market\tuser_id\titem_id\trating\nde\t1\t10\t5\nde\t1\t12\t1\njp\t2\t11\t1\njp\t2\t13\t1\n")
        ds = load_interactions(path)
        assert len(ds) == 4
        assert (ds.interactions["timestamp"] == 0).all()
        assert [case.item for case in leave_one_out_split(ds).test if case.user == 1] == [12]

    def test_per_market_without_timestamp(self, tmp_path):
        _write(tmp_path / "de.tsv", "1\t10\t1\n2\t10\t1\n")
        ds = load_interactions(str(tmp_path), fmt="per_market")
        assert len(ds) == 2
        assert (ds.interactions["timestamp"] == 0).all()


class TestFilter:

    def test_sparse_user_removed(self, make_dataset):
        rows = [("de", 1, item, 0) for item in range(5)] + [("de", 2, 0, 0)]
        rows += [("de", u, item, 0) for u in range(3, 7) for item in range(5)]
        out = filter_min_interactions(make_dataset(rows), 5)
        assert 2 not in out.all_users
        assert 1 in out.all_users

    def test_fixed_point_returns_same_dataset(self, make_dataset):
        ds = make_dataset([("de", u, i, 0) for u in range(3) for i in range(3)])
        assert filter_min_interactions(ds, 3) is ds

    def test_cascade(self, make_dataset):
        rows = [("de", 1, 1, 0), ("de", 1, 2, 0), ("de", 2, 1, 0), ("de", 2, 2, 0), ("de", 3, 2, 0), ("de", 3, 3, 0)]
        out = filter_min_interactions(make_dataset(rows), 2)
        assert out.all_users == (1, 2)
        assert set(out.interactions["item"]) == {1, 2}

    def test_every_survivor_meets_threshold(self, tiny_synth):
        out = filter_min_interactions(generate_synthetic(tiny_synth, seed=1), 4)
        assert out.interactions["user"].value_counts().min() >= 4
        assert out.interactions["item"].value_counts().min() >= 4

    def test_rejects_zero_threshold(self, make_dataset):
        with pytest.raises(DataValidationError):
            filter_min_interactions(make_dataset([("de", 1, 1, 0)]), 0)


class TestLeaveOneOut:

    def test_latest_timestamp_held_out(self, make_dataset):
        split = leave_one_out_split(make_dataset([("de", 1, 7, 1), ("de", 1, 5, 3), ("de", 1, 9, 2)]))
        assert split.test[0].item == 5
        assert set(split.train.user_items[1]) == {7, 9}

    def test_ties_go_to_largest_item(self, make_dataset):
        split = leave_one_out_split(make_dataset([("de", 1, 3, 0), ("de", 1, 8, 0), ("de", 1, 4, 0)]))
        assert split.test[0].item == 8

    def test_single_interaction_user(self, make_dataset):
        with pytest.raises(SplitError, match="User 2"):
            leave_one_out_split(make_dataset([("de", 1, 1, 0), ("de", 1, 2, 0), ("de", 2, 1, 0)]))

    def test_one_case_per_user_disjoint_from_train(self, make_dataset):
        rng = np.random.default_rng(0)
        rows = []
        for user in range(100):
            items = rng.choice(50, size=rng.integers(2, 8), replace=False)
            rows += [("de", user, int(item), int(rng.integers(0, 10))) for item in items]
        split = leave_one_out_split(make_dataset(rows))
        assert len(split.test) == 100
        for case in split.test:
            assert case.item not in set(split.train.user_items[case.user])

    def test_vocabulary_keeps_held_out_items(self, make_dataset):
        split = leave_one_out_split(make_dataset([("de", 1, 1, 0), ("de", 1, 2, 1)]))
        assert 2 in split.train.items


class TestSampleNegatives:

    def test_forced_set(self, make_dataset):
        rows = [("de", 1, item, 0) for item in range(7)] + [("de", 2, item, 0) for item in range(10)]
        negatives = sample_negatives(make_dataset(rows), 1, 3, np.random.default_rng(0))
        assert sorted(negatives) == [7, 8, 9]

    def test_zero(self, make_dataset):
        assert sample_negatives(make_dataset([("de", 1, 1, 0)]), 1, 0, np.random.default_rng(0)) == []

    def test_deterministic(self, tiny_split):
        user = tiny_split.train.all_users[0]
        first = sample_negatives(tiny_split.train, user, 5, np.random.default_rng(11))
        second = sample_negatives(tiny_split.train, user, 5, np.random.default_rng(11))
        assert first == second
        assert len(set(first)) == 5

    def test_exclude(self, make_dataset):
        rows = [("de", 1, 0, 0)] + [("de", 2, item, 0) for item in range(4)]
        negatives = sample_negatives(make_dataset(rows), 1, 2, np.random.default_rng(0), exclude=[3])
        assert sorted(negatives) == [1, 2]

    def test_insufficient(self, make_dataset):
        rows = [("de", 1, 0, 0), ("de", 2, 1, 0)]
        with pytest.raises(InsufficientCandidatesError):
            sample_negatives(make_dataset(rows), 1, 2, np.random.default_rng(0))


class TestSynthetic:

    def test_zero_cross_probability_stays_in_block(self):
        config = SynthConfig(n_markets=1, users_per_market=30, n_items=30, n_groups=1, items_per_group=10, p_in=0.5, p_out=0.0)
        ds = generate_synthetic(config, seed=0)
        assert ds.interactions["item"].max() < 10

    def test_block_density(self):
        config = SynthConfig(n_markets=1, users_per_market=50, n_items=40, n_groups=2, p_in=0.5, p_out=0.01)
        ds = generate_synthetic(config, seed=0)
        groups = planted_groups(config, seed=0)
        frame = ds.interactions
        in_block = (frame["item"] // 20) == frame["user"].map(groups)
        in_rate = in_block.sum() / (50 * 20)
        out_rate = (~in_block).sum() / (50 * 20)
        assert in_rate == pytest.approx(0.5, abs=0.1)
        assert in_rate / max(out_rate, 1e-9) > 10

    def test_same_seed_same_data(self, tiny_synth):
        first = generate_synthetic(tiny_synth, seed=5).interactions
        second = generate_synthetic(tiny_synth, seed=5).interactions
        pd.testing.assert_frame_equal(first, second)

    def test_markets_and_users(self, tiny_synth):
        ds = generate_synthetic(tiny_synth, seed=5)
        assert ds.markets == ("de", "jp")
        assert all(user < 20 for user in ds.users["de"])
        assert all(20 <= user < 40 for user in ds.users["jp"])

    def test_requires_recoverable_structure(self):
        with pytest.raises(SynthesisError):
            generate_synthetic(SynthConfig(p_in=0.1, p_out=0.1), seed=0)


def test_split_artifacts(tmp_path, tiny_split):
    write_split(tiny_split, tmp_path / "ingest")
    restored = read_split(tmp_path / "ingest")
    assert restored.test == tiny_split.test
    assert restored.train.items == tiny_split.train.items
    assert len(restored.train) == len(tiny_split.train)


def test_read_split_missing(tmp_path):
    with pytest.raises(MissingArtifactError, match="train.tsv"):
        read_split(tmp_path)
