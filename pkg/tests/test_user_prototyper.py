import itertools

import numpy as np
import pytest

from dgre.core.exceptions import ClusteringSupportError, MissingArtifactError, PrototypeSelectionError, ShapeMismatchError
from dgre.core.numerics import finite_diff_check
from dgre.models.graph import EmbeddingTable
from dgre.models.prototypes import CommunityPartition, UserPrototypeSet
from dgre.services.user_prototyper import (
    assign_all,
    assign_prototype,
    clustering_gradient,
    clustering_loss,
    cosine_similarity,
    detect_communities,
    landmark_scores,
    load_assignments,
    load_user_prototypes,
    modularity,
    prototype_users,
    refine_embeddings,
    select_prototypes,
    sharpen,
    soft_assign,
    write_assignments,
    write_user_prototypes,
)

from conftest import clique_edges


def _student_t_oracle(X, B, alpha):
    W = np.zeros((len(X), len(B)))
    for j, x in enumerate(X):
        for k, b in enumerate(B):
            W[j, k] = (1 + np.sum((x - b) ** 2) / alpha) ** (-(alpha + 1) / 2)
        W[j] /= W[j].sum()
    return W


def _sharpen_oracle(W):
    f = W.sum(axis=0)
    out = W ** 2 / f
    return out / out.sum(axis=1, keepdims=True)


class TestCosine:

    def test_identical_and_orthogonal(self):
        assert cosine_similarity([1, 0], [1, 0]) == pytest.approx(1.0)
        assert cosine_similarity([1, 0], [0, 1]) == 0.0

    def test_zero_vector(self):
        assert cosine_similarity([0, 0], [1, 2]) == 0.0

    def test_random_vectors(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=5), rng.normal(size=5)
        expected = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
        assert cosine_similarity(a, b) == pytest.approx(expected, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            cosine_similarity([1, 0], [1, 0, 0])


class TestCommunities:

    def test_two_triangles(self, make_graph):
        g = make_graph(list(range(6)), clique_edges([0, 1, 2]) + clique_edges([3, 4, 5]))
        partition = detect_communities(g)
        assert partition.n_communities == 2
        assert partition.members() == {0: (0, 1, 2), 1: (3, 4, 5)}
        assert modularity(g, partition) == pytest.approx(0.5)

    def test_complete_graph(self, make_graph):
        g = make_graph(list(range(4)), clique_edges([0, 1, 2, 3]))
        assert detect_communities(g).n_communities == 1

    def test_no_edges(self, make_graph):
        partition = detect_communities(make_graph([5, 6, 7], []))
        assert partition.assignment == {5: 0, 6: 1, 7: 2}

    def test_modularity_of_singletons_is_negative(self, make_graph):
        g = make_graph(list(range(4)), clique_edges([0, 1, 2, 3]))
        singletons = CommunityPartition(assignment={node: node for node in range(4)})
        assert modularity(g, singletons) < 0


class TestSelectPrototypes:

    def test_one_landmark_per_clique(self, two_cliques, clustered_embeddings):
        partition = detect_communities(two_cliques)
        B = select_prototypes(two_cliques, clustered_embeddings, partition, k=2)
        assert B.k == 2
        assert sorted(node < 10 for node in B.source_nodes) == [False, True]
        np.testing.assert_array_equal(B.prototypes[0], clustered_embeddings.vector(B.source_nodes[0]))

    def test_k_equals_n(self, two_cliques, clustered_embeddings):
        partition = detect_communities(two_cliques)
        B = select_prototypes(two_cliques, clustered_embeddings, partition, k=8)
        assert sorted(B.source_nodes) == sorted(two_cliques.node_ids)

    def test_star_picks_hub(self, make_graph):
        g = make_graph([0, 1, 2, 3, 4], [(0, leaf) for leaf in range(1, 5)])
        E = EmbeddingTable(node_ids=g.node_ids, vectors=np.ones((5, 3)))
        B = select_prototypes(g, E, detect_communities(g), k=1)
        assert B.source_nodes == (0,)

    def test_star_picks_hub_with_largest_id(self, make_graph):
        g = make_graph([0, 1, 2, 3, 9], [(leaf, 9) for leaf in range(4)])
        E = EmbeddingTable(node_ids=g.node_ids, vectors=np.ones((5, 3)))
        partition = detect_communities(g)
        assert partition.n_communities == 1
        np.testing.assert_allclose(landmark_scores(g, E, partition), [0.125, 0.125, 0.125, 0.125, 2.0])
        assert select_prototypes(g, E, partition, k=1).source_nodes == (9,)

    def test_matches_exhaustive_search(self, make_graph):
        rng = np.random.default_rng(11)
        left, right = list(range(6)), list(range(6, 11))
        edges = [(a, b) for group in (left, right) for a, b in clique_edges(group) if rng.random() < 0.7]
        edges.append((5, 6))
        g = make_graph(left + right, edges)
        E = EmbeddingTable(node_ids=g.node_ids, vectors=rng.normal(size=(11, 4)))
        partition = CommunityPartition(assignment={node: int(node >= 6) for node in g.node_ids})

        A = g.adjacency.toarray()
        d = A.sum(axis=1)
        two_m = d.sum()
        score = {}
        for v in g.node_ids:
            same = left if v in left else right
            score[v] = sum(
                (A[v, j] - d[v] * d[j] / two_m) * cosine_similarity(E.vector(v), E.vector(j))
                for j in same if j != v
            )
        best = max(
            (pair for pair in itertools.combinations(g.node_ids, 2) if (pair[0] < 6) != (pair[1] < 6)),
            key=lambda pair: score[pair[0]] + score[pair[1]],
        )

        np.testing.assert_allclose(landmark_scores(g, E, partition), [score[v] for v in g.node_ids], atol=1e-12)
        assert sorted(select_prototypes(g, E, partition, k=2).source_nodes) == sorted(best)

    def test_scale_invariance(self, two_cliques, clustered_embeddings):
        partition = detect_communities(two_cliques)
        scaled = EmbeddingTable(node_ids=clustered_embeddings.node_ids, vectors=3.0 * clustered_embeddings.vectors)
        first = select_prototypes(two_cliques, clustered_embeddings, partition, k=2)
        second = select_prototypes(two_cliques, scaled, partition, k=2)
        assert first.source_nodes == second.source_nodes

    @pytest.mark.parametrize("k", [0, 9])
    def test_invalid_k(self, two_cliques, clustered_embeddings, k):
        partition = detect_communities(two_cliques)
        with pytest.raises(PrototypeSelectionError):
            select_prototypes(two_cliques, clustered_embeddings, partition, k=k)


class TestSoftAssign:

    def test_own_prototype_is_row_maximum(self):
        E = EmbeddingTable(node_ids=(1,), vectors=np.array([[1.0, 1.0]]))
        B = UserPrototypeSet(prototypes=np.array([[1.0, 1.0], [5.0, 5.0], [-4.0, 3.0]]), source_nodes=(1, 2, 3))
        assert assign_prototype(soft_assign(E, B).W, 0) == 0

    def test_equidistant(self):
        E = EmbeddingTable(node_ids=(1,), vectors=np.zeros((1, 2)))
        B = UserPrototypeSet(
            prototypes=np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]),
            source_nodes=(1, 2, 3, 4),
        )
        np.testing.assert_allclose(soft_assign(E, B).W, [[0.25] * 4])

    @pytest.mark.parametrize("alpha", [0.5, 1.0, 3.0])
    def test_matches_formula(self, alpha):
        rng = np.random.default_rng(1)
        X, P = rng.normal(size=(6, 3)), rng.normal(size=(3, 3))
        assignment = soft_assign(
            EmbeddingTable(node_ids=tuple(range(6)), vectors=X),
            UserPrototypeSet(prototypes=P, source_nodes=(0, 1, 2), alpha=alpha),
        )
        np.testing.assert_allclose(assignment.W.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(assignment.W, _student_t_oracle(X, P, alpha), atol=1e-12)
        np.testing.assert_allclose(assignment.W_sharp.sum(axis=1), 1.0, atol=1e-12)


class TestSharpen:

    def test_one_hot_stays(self):
        np.testing.assert_allclose(sharpen(np.eye(2)), np.eye(2))

    def test_uniform_stays(self):
        np.testing.assert_allclose(sharpen(np.full((2, 2), 0.5)), np.full((2, 2), 0.5))

    def test_single_row(self):
        np.testing.assert_allclose(sharpen(np.array([[0.6, 0.4]])), [[0.6, 0.4]])

    def test_matches_formula(self):
        W = np.random.default_rng(2).dirichlet(np.ones(3), size=5)
        np.testing.assert_allclose(sharpen(W), _sharpen_oracle(W), atol=1e-12)

    def test_keeps_argmax_with_equal_frequencies(self):
        W = np.array([[0.7, 0.3], [0.3, 0.7]])
        assert list(assign_all(sharpen(W))) == list(assign_all(W))


class TestClusteringLoss:

    def test_identical_is_zero(self):
        W = np.random.default_rng(3).dirichlet(np.ones(3), size=4)
        assert clustering_loss(W, W) == pytest.approx(0.0, abs=1e-12)

    def test_nonnegative_and_matches_oracle(self):
        rng = np.random.default_rng(4)
        W = rng.dirichlet(np.ones(2), size=3)
        target = rng.dirichlet(np.ones(2), size=3)
        expected = float(np.sum(target * np.log(target / W)))
        assert clustering_loss(W, target) == pytest.approx(expected, abs=1e-10)
        assert clustering_loss(W, target) >= 0

    def test_zero_target_entries_contribute_nothing(self):
        W = np.array([[0.5, 0.5]])
        assert clustering_loss(W, np.array([[1.0, 0.0]])) == pytest.approx(np.log(2))

    def test_support_error(self):
        with pytest.raises(ClusteringSupportError):
            clustering_loss(np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            clustering_loss(np.ones((2, 2)) / 2, np.ones((2, 3)) / 3)


class TestRefine:

    def _setup(self):
        rng = np.random.default_rng(5)
        E = EmbeddingTable(node_ids=(1, 2, 3, 4), vectors=rng.normal(size=(4, 3)))
        B = UserPrototypeSet(prototypes=rng.normal(size=(2, 3)), source_nodes=(1, 2))
        return E, B

    def test_zero_steps(self):
        E, B = self._setup()
        refined, trace = refine_embeddings(E, B, steps=0, lr=0.1)
        np.testing.assert_array_equal(refined.vectors, E.vectors)
        assert trace == []

    def test_trace_non_increasing_with_fixed_target(self):
        E, B = self._setup()
        _, trace = refine_embeddings(E, B, steps=20, lr=0.01, refresh_interval=100)
        assert all(later <= earlier + 1e-6 for earlier, later in zip(trace, trace[1:]))

    def test_gradient_matches_finite_differences(self):
        E, B = self._setup()
        W_sharp = np.random.default_rng(6).dirichlet(np.ones(2), size=4)
        _, grad = clustering_gradient(E.vectors, B.prototypes, W_sharp, B.alpha)

        def f(params):
            return clustering_gradient(params["X"], B.prototypes, W_sharp, B.alpha)[0]

        assert finite_diff_check(f, {"X": E.vectors}, {"X": grad}) < 1e-4


class TestAssign:

    def test_row_maximum(self):
        assert assign_prototype(np.array([[0.1, 0.7, 0.2]]), 0) == 1

    def test_uniform_row_takes_first(self):
        assert assign_prototype(np.array([[0.5, 0.5]]), 0) == 0


def test_prototype_users_end_to_end(two_cliques, clustered_embeddings):
    fit = prototype_users(two_cliques, clustered_embeddings, k=2, refine_steps=5, refine_lr=0.01)
    assert fit.partition.n_communities == 2
    assert fit.prototypes.k == 2
    assert fit.assignment.W.shape == (8, 2)
    assert len(fit.loss_trace) == 5
    left = assign_all(fit.assignment.W[:4])
    right = assign_all(fit.assignment.W[4:])
    assert len(set(left)) == 1 and len(set(right)) == 1
    assert left[0] != right[0]


def test_prototype_dumps(tmp_path, two_cliques, clustered_embeddings):
    fit = prototype_users(two_cliques, clustered_embeddings, k=2, refine_steps=0)
    write_user_prototypes(fit.prototypes, tmp_path / "user_prototypes.tsv")
    write_assignments(fit.assignment, tmp_path / "assignments.tsv")
    prototypes = load_user_prototypes(tmp_path / "user_prototypes.tsv")
    assignment = load_assignments(tmp_path / "assignments.tsv")
    assert prototypes.source_nodes == fit.prototypes.source_nodes
    np.testing.assert_allclose(prototypes.prototypes, fit.prototypes.prototypes, rtol=1e-8)
    np.testing.assert_allclose(assignment.W, fit.assignment.W, atol=1e-8)


def test_missing_prototype_dump(tmp_path):
    with pytest.raises(MissingArtifactError):
        load_user_prototypes(tmp_path / "user_prototypes.tsv")
