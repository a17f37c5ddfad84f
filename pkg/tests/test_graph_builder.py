import itertools

import numpy as np
import pytest

from dgre.core.exceptions import GraphError, MissingArtifactError, UnknownEntityError, UnknownMarketError
from dgre.services.graph_builder import (
    build_item_graph,
    build_item_graphs,
    build_user_graph,
    load_graph,
    neighbors,
    write_graph,
)


def _assert_graph_invariants(g):
    A = g.adjacency.toarray()
    np.testing.assert_array_equal(A, A.T)
    assert not A.diagonal().any()
    assert g.degrees.sum() == 2 * g.edge_count


def test_user_edge_at_threshold(make_dataset):
    ds = make_dataset([("de", 1, i, 0) for i in (1, 2, 3)] + [("de", 2, i, 0) for i in (2, 3, 4)])
    g = build_user_graph(ds, 2)
    assert g.edge_count == 1
    assert neighbors(g, 1) == [2]


def test_user_no_edge_below_threshold(make_dataset):
    ds = make_dataset([("de", 1, 1, 0), ("de", 1, 2, 0), ("de", 2, 2, 0), ("de", 2, 5, 0)])
    g = build_user_graph(ds, 2)
    assert g.edge_count == 0
    assert g.n_nodes == 2


def test_user_graph_matches_intersection_oracle(make_dataset):
    rng = np.random.default_rng(4)
    rows = []
    markets = ["de", "jp"]
    for user in range(20):
        for item in rng.choice(12, size=rng.integers(1, 7), replace=False):
            rows.append((markets[user % 2], user, int(item), 0))
    ds = make_dataset(rows)
    g = build_user_graph(ds, 2)
    items = ds.user_items
    for a, b in itertools.combinations(ds.all_users, 2):
        shared = len(set(items[a]) & set(items[b]))
        assert (b in neighbors(g, a)) == (shared >= 2)
    _assert_graph_invariants(g)


def test_user_graph_spans_markets(make_dataset):
    ds = make_dataset([("de", 1, 1, 0), ("de", 1, 2, 0), ("jp", 2, 1, 0), ("jp", 2, 2, 0)])
    assert neighbors(build_user_graph(ds, 2), 1) == [2]


def test_empty_train_rejected(make_dataset):
    with pytest.raises(GraphError):
        build_user_graph(make_dataset([]), 2)


def test_item_edge(make_dataset):
    ds = make_dataset([("de", 1, 1, 0), ("de", 1, 2, 0), ("de", 2, 1, 0), ("de", 2, 2, 0), ("de", 3, 3, 0)])
    g = build_item_graph(ds, "de", 2)
    assert g.kind == "item"
    assert g.market == "de"
    assert neighbors(g, 1) == [2]
    assert neighbors(g, 3) == []


def test_item_single_co_buyer_no_edge(make_dataset):
    ds = make_dataset([("de", 1, 1, 0), ("de", 1, 2, 0)])
    assert build_item_graph(ds, "de", 2).edge_count == 0


def test_item_graph_only_uses_its_market(make_dataset):
    rows = [("de", 1, 1, 0), ("de", 1, 2, 0), ("jp", 2, 1, 0), ("jp", 2, 2, 0)]
    graphs = build_item_graphs(make_dataset(rows), 2)
    assert set(graphs) == {"de", "jp"}
    assert all(g.edge_count == 0 for g in graphs.values())


def test_item_graph_matches_oracle(make_dataset):
    rng = np.random.default_rng(8)
    rows = [("de", user, int(item), 0) for user in range(15) for item in rng.choice(10, size=4, replace=False)]
    ds = make_dataset(rows)
    g = build_item_graph(ds, "de", 2)
    buyers = {item: set(group) for item, group in ds.interactions.groupby("item")["user"]}
    for a, b in itertools.combinations(g.node_ids, 2):
        assert (b in neighbors(g, a)) == (len(buyers[a] & buyers[b]) >= 2)
    _assert_graph_invariants(g)


def test_unknown_market(make_dataset):
    with pytest.raises(UnknownMarketError):
        build_item_graph(make_dataset([("de", 1, 1, 0)]), "fr", 2)


def test_neighbors(make_graph):
    g = make_graph([1, 2, 3], [(1, 2), (2, 3)])
    assert neighbors(g, 2) == [1, 3]
    with pytest.raises(UnknownEntityError):
        neighbors(g, 99)


def test_graph_dump_reload(tmp_path, two_cliques):
    names = write_graph(two_cliques, tmp_path / "user")
    assert names == ["edges.tsv", "node_index.tsv"]
    restored = load_graph(tmp_path / "user")
    assert restored.node_ids == two_cliques.node_ids
    assert (restored.adjacency != two_cliques.adjacency).nnz == 0


def test_load_graph_missing(tmp_path):
    with pytest.raises(MissingArtifactError):
        load_graph(tmp_path / "nothing")
