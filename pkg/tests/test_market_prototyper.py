import numpy as np
import pytest

from dgre.core.exceptions import DiscriminatorError, MissingArtifactError, PrototypeSelectionError, UnknownEntityError
from dgre.core.numerics import finite_diff_check
from dgre.models.graph import EmbeddingTable
from dgre.models.prototypes import Discriminator
from dgre.services.market_prototyper import (
    build_all_market_prototypes,
    discriminator_objective,
    load_market_prototypes,
    mi_estimate,
    neighborhood_mean,
    pool_prototype,
    score_items,
    select_items,
    train_discriminator,
    write_market_prototypes,
)

from conftest import clique_edges

LOG_HALF = np.log(0.5)


@pytest.fixture
def path_graph(make_graph):
    return make_graph([1, 2, 3], [(1, 2), (2, 3)], kind="item", market="de")


@pytest.fixture
def path_table():
    return EmbeddingTable(node_ids=(1, 2, 3), vectors=np.array([[1.0, 0.0], [0.0, 2.0], [3.0, 4.0]]))


class TestNeighborhood:

    def test_single_neighbor(self, path_graph, path_table):
        np.testing.assert_allclose(neighborhood_mean(path_graph, path_table, 1), [0.0, 2.0])

    def test_two_neighbors(self, path_graph, path_table):
        np.testing.assert_allclose(neighborhood_mean(path_graph, path_table, 2), [2.0, 2.0])

    def test_isolated(self, make_graph, path_table):
        g = make_graph([1, 2, 3], [(1, 2)], kind="item", market="de")
        np.testing.assert_array_equal(neighborhood_mean(g, path_table, 3), [0.0, 0.0])

    def test_unknown_item(self, path_graph, path_table):
        with pytest.raises(UnknownEntityError):
            neighborhood_mean(path_graph, path_table, 99)


class TestMutualInformation:

    def test_zero_discriminator(self, path_graph, path_table):
        value = mi_estimate(Discriminator.zeros(2), path_graph, path_table, 1, [2, 3])
        assert value == pytest.approx(2 * LOG_HALF)

    def test_never_positive(self, path_graph, path_table):
        rng = np.random.default_rng(0)
        for _ in range(10):
            T = Discriminator(matrix=rng.normal(scale=3.0, size=(2, 2)), bias=float(rng.normal()))
            assert mi_estimate(T, path_graph, path_table, 2, [1, 3]) <= 0.0

    def test_sampled_negatives(self, path_graph, path_table):
        value = mi_estimate(
            Discriminator.zeros(2), path_graph, path_table, 1, [2, 3],
            rng=np.random.default_rng(1), n_samples=5,
        )
        assert value == pytest.approx(2 * LOG_HALF)

    def test_empty_pool(self, path_graph, path_table):
        with pytest.raises(DiscriminatorError):
            mi_estimate(Discriminator.zeros(2), path_graph, path_table, 1, [])

    def test_score_items_matches_single_estimates(self, path_graph, path_table):
        T = Discriminator(matrix=np.array([[0.3, -0.1], [0.2, 0.4]]), bias=0.1)
        scores = score_items(T, path_graph, path_table)
        for position, item in enumerate(path_graph.node_ids):
            pool = [other for other in path_graph.node_ids if other != item]
            expected = mi_estimate(T, path_graph, path_table, item, pool)
            assert scores[position] == pytest.approx(expected, abs=1e-10)


class TestDiscriminator:

    def test_objective_increases_on_clustered_items(self, two_cliques, clustered_embeddings):
        T = train_discriminator(two_cliques, clustered_embeddings, epochs=100, lr=0.05, neg_per_pos=4, seed=0)
        trace = T.objective_trace
        assert len(trace) == 100
        assert trace[0] == pytest.approx(2 * LOG_HALF)
        assert np.mean(trace[-10:]) > trace[0]

    def test_deterministic(self, two_cliques, clustered_embeddings):
        first = train_discriminator(two_cliques, clustered_embeddings, epochs=10, seed=3)
        second = train_discriminator(two_cliques, clustered_embeddings, epochs=10, seed=3)
        np.testing.assert_array_equal(first.matrix, second.matrix)
        assert first.objective_trace == second.objective_trace

    def test_zero_epochs_is_zero(self, two_cliques, clustered_embeddings):
        T = train_discriminator(two_cliques, clustered_embeddings, epochs=0)
        np.testing.assert_array_equal(T.matrix, np.zeros((2, 2)))
        assert T.bias == 0.0

    def test_objective_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        X, N = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
        anchors = np.repeat(np.arange(6), 2)
        others = (anchors + rng.integers(1, 6, size=12)) % 6
        M, b = 0.3 * rng.normal(size=(3, 3)), 0.2
        _, grad_M, grad_b = discriminator_objective(M, b, X, N, anchors, others)

        def f(params):
            return discriminator_objective(params["M"], float(params["b"][0]), X, N, anchors, others)[0]

        error = finite_diff_check(f, {"M": M, "b": np.array([b])}, {"M": grad_M, "b": np.array([grad_b])})
        assert error < 1e-4

    def test_needs_two_connected_items(self, make_graph, path_table):
        g = make_graph([1, 2, 3], [], kind="item", market="de")
        with pytest.raises(DiscriminatorError):
            train_discriminator(g, path_table, epochs=1)


class TestSelection:

    def test_ties_take_smallest_ids(self, two_cliques, clustered_embeddings):
        selected = select_items(two_cliques, clustered_embeddings, Discriminator.zeros(2), k_s=3)
        assert list(selected) == [0, 1, 2]

    def test_ranked_by_score(self, two_cliques, clustered_embeddings):
        T = train_discriminator(two_cliques, clustered_embeddings, epochs=20, lr=0.05, seed=1)
        scores = score_items(T, two_cliques, clustered_embeddings)
        selected = select_items(two_cliques, clustered_embeddings, T, k_s=4)
        threshold = min(selected.values())
        for position, item in enumerate(two_cliques.node_ids):
            if item not in selected:
                assert scores[position] <= threshold

    def test_clamped_to_graph_size(self, two_cliques, clustered_embeddings):
        selected = select_items(two_cliques, clustered_embeddings, Discriminator.zeros(2), k_s=20)
        assert sorted(selected) == sorted(two_cliques.node_ids)

    def test_isolated_fill_by_norm(self, make_graph):
        g = make_graph([0, 1, 2, 3], [(0, 1)], kind="item", market="de")
        Q = EmbeddingTable(node_ids=(0, 1, 2, 3), vectors=np.array([[1.0, 0.0], [0.0, 1.0], [0.1, 0.1], [2.0, 2.0]]))
        selected = select_items(g, Q, Discriminator.zeros(2), k_s=3)
        assert list(selected) == [0, 1, 3]


class TestPooling:

    def test_single_item(self, path_table):
        prototype = pool_prototype({2: -1.2}, path_table, market="de")
        np.testing.assert_allclose(prototype.vector, [0.0, 2.0])
        assert prototype.market == "de"

    def test_equal_weights_give_midpoint(self, path_table):
        prototype = pool_prototype({1: -0.7, 3: -0.7}, path_table)
        np.testing.assert_allclose(prototype.vector, [2.0, 2.0])

    def test_weighted(self, path_table):
        prototype = pool_prototype({1: -1.0, 3: -3.0}, path_table)
        np.testing.assert_allclose(prototype.vector, [2.5, 3.0])

    def test_zero_total_falls_back_to_mean(self, path_table):
        prototype = pool_prototype({1: 1.0, 3: -1.0}, path_table)
        np.testing.assert_allclose(prototype.vector, [2.0, 2.0])

    def test_empty(self, path_table):
        with pytest.raises(PrototypeSelectionError):
            pool_prototype({}, path_table)


def _mirrored_markets(make_dataset):
    rows = []
    for market, offset in (("de", 0), ("jp", 100)):
        for user in range(1, 5):
            for item in range(4):
                rows.append((market, offset + user, item, user + item))
    return make_dataset(rows)


def test_identical_markets_give_identical_prototypes(make_dataset, proto_settings):
    train = _mirrored_markets(make_dataset)
    Q = EmbeddingTable(node_ids=(0, 1, 2, 3), vectors=np.random.default_rng(2).normal(size=(4, 3)))
    prototypes, failures = build_all_market_prototypes(train, {"de": Q, "jp": Q}, proto_settings, seed=5)
    assert failures == {}
    np.testing.assert_array_equal(prototypes["de"].vector, prototypes["jp"].vector)
    assert prototypes["de"].selected_items == prototypes["jp"].selected_items
    assert len(prototypes["de"].selected_items) == proto_settings.k_s


def test_failing_market_is_reported(make_dataset, proto_settings):
    rows = [("de", user, item, 0) for user in range(1, 5) for item in range(4)]
    rows += [("jp", 100, 0, 0), ("jp", 100, 1, 1)]
    train = make_dataset(rows)
    Q = EmbeddingTable(node_ids=(0, 1, 2, 3), vectors=np.random.default_rng(2).normal(size=(4, 3)))
    prototypes, failures = build_all_market_prototypes(train, {"de": Q, "jp": Q}, proto_settings)
    assert list(prototypes) == ["de"]
    assert "jp" in failures


def test_market_prototype_dump(tmp_path, make_dataset, proto_settings):
    train = _mirrored_markets(make_dataset)
    Q = EmbeddingTable(node_ids=(0, 1, 2, 3), vectors=np.random.default_rng(2).normal(size=(4, 3)))
    prototypes, _ = build_all_market_prototypes(train, {"de": Q, "jp": Q}, proto_settings)
    write_market_prototypes(prototypes, tmp_path)
    loaded = load_market_prototypes(tmp_path)
    assert sorted(loaded) == ["de", "jp"]
    np.testing.assert_allclose(loaded["de"].vector, prototypes["de"].vector, rtol=1e-8)
    assert list(loaded["jp"].selected_items) == list(prototypes["jp"].selected_items)


def test_missing_market_prototype_dump(tmp_path):
    with pytest.raises(MissingArtifactError):
        load_market_prototypes(tmp_path)
