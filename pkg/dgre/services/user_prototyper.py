"""
Serviço de protótipos compartilhados: comunidades por modularidade, seleção de
usuários-landmark, atribuição t-Student afiada e refinamento por KL
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
import structlog

from dgre.core.exceptions import (
    ClusteringSupportError,
    GraphError,
    MissingArtifactError,
    PrototypeSelectionError,
    ShapeMismatchError,
)
from dgre.core.kernels import louvain_local_moving
from dgre.models.graph import EmbeddingTable, InteractionGraph
from dgre.models.prototypes import CommunityPartition, SoftAssignment, UserPrototypeSet

logger = structlog.get_logger(__name__)

SCORE_TOLERANCE = 1e-12
MAX_SWEEPS = 100
MAX_LEVELS = 32


def cosine_similarity(e_i, e_j) -> float:
    """Cosseno entre dois vetores; 0 quando algum deles é nulo"""
    a = np.asarray(e_i, dtype=np.float64)
    b = np.asarray(e_j, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"cosine_similarity: shape mismatch {a.shape} vs {b.shape}")
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    return float(np.dot(a, b) / (norm_a * norm_b))


def cosine_matrix(X: np.ndarray) -> np.ndarray:
    """Matriz de cossenos entre as linhas de X (linhas nulas dão 0)"""
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    unit = np.divide(X, norms, out=np.zeros_like(X, dtype=np.float64), where=norms > 0)
    return unit @ unit.T


def detect_communities(g: InteractionGraph) -> CommunityPartition:
    """
    Maximização gulosa de modularidade no estilo Louvain

    Cada nível roda a movimentação local (kernel numba) até nenhum nó mudar e
    depois agrega as comunidades em super-nós (Pᵀ A P). Comunidades finais são
    numeradas pela posição do seu menor membro; nós isolados ficam sozinhos.

    Raises:
        GraphError: Grafo sem nós
    """
    n = g.n_nodes
    if n == 0:
        raise GraphError("Cannot detect communities on an empty graph")

    membership = np.arange(n, dtype=np.int64)
    adjacency = sp.csr_matrix(g.adjacency, dtype=np.float64)
    total_weight = float(adjacency.sum())

    levels = 0
    if total_weight > 0:
        while levels < MAX_LEVELS:
            degrees = np.asarray(adjacency.sum(axis=1)).ravel()
            community = np.arange(adjacency.shape[0], dtype=np.int64)
            moves = louvain_local_moving(
                adjacency.indptr.astype(np.int64),
                adjacency.indices.astype(np.int64),
                adjacency.data.astype(np.float64),
                degrees,
                total_weight,
                community,
                MAX_SWEEPS,
            )
            levels += 1
            if moves == 0:
                break
            _, relabeled = np.unique(community, return_inverse=True)
            n_super = int(relabeled.max()) + 1
            indicator = sp.csr_matrix(
                (np.ones(len(relabeled)), (np.arange(len(relabeled)), relabeled)),
                shape=(len(relabeled), n_super),
            )
            adjacency = sp.csr_matrix(indicator.T @ adjacency @ indicator)
            adjacency.sort_indices()
            membership = relabeled[membership]

    # renumera pela posição do menor membro
    first_seen = {}
    for position, label in enumerate(membership):
        first_seen.setdefault(int(label), len(first_seen))
    assignment = {g.node_ids[p]: first_seen[int(label)] for p, label in enumerate(membership)}
    partition = CommunityPartition(assignment=assignment)

    logger.info(
        "Communities detected",
        nodes=n,
        communities=partition.n_communities,
        levels=levels,
        modularity=modularity(g, partition),
    )
    return partition


def modularity(g: InteractionGraph, partition: CommunityPartition) -> float:
    """Q = (1/2m) Σ_ij (A_ij − d_i d_j / 2m) δ(c_i, c_j); 0 para grafos sem arestas"""
    two_m = float(g.adjacency.sum())
    if two_m == 0:
        return 0.0
    labels = np.array([partition.assignment[node] for node in g.node_ids], dtype=np.int64)
    coo = g.adjacency.tocoo()
    internal = np.bincount(labels[coo.row], weights=coo.data * (labels[coo.row] == labels[coo.col]),
                           minlength=labels.max() + 1)
    totals = np.bincount(labels, weights=g.degrees, minlength=labels.max() + 1)
    return float(np.sum(internal / two_m - (totals / two_m) ** 2))


def landmark_scores(g: InteractionGraph, E: EmbeddingTable, partition: CommunityPartition) -> np.ndarray:
    """
    s(v) = Σ_{j na comunidade de v} (A_vj − d_v d_j / 2m) · C(v, j), j ≠ v

    Com 2m = 0 o termo do modelo nulo vale 0. Retorna na ordem de `g.node_ids`.
    """
    X = E.aligned_to(g.node_ids)
    degrees = g.degrees
    two_m = float(degrees.sum())
    scores = np.zeros(g.n_nodes)
    for members in partition.members().values():
        positions = np.array([g.index[node] for node in members], dtype=np.int64)
        block = g.adjacency[positions][:, positions].toarray()
        if two_m > 0:
            block = block - np.outer(degrees[positions], degrees[positions]) / two_m
        np.fill_diagonal(block, 0.0)
        scores[positions] = np.sum(block * cosine_matrix(X[positions]), axis=1)
    return scores


def select_prototypes(
    g: InteractionGraph,
    E: EmbeddingTable,
    partition: CommunityPartition,
    k: int,
    alpha: float = 1.0,
) -> UserPrototypeSet:
    """
    Escolhe k usuários-landmark e usa seus embeddings como protótipos

    As k maiores comunidades (empate: menor índice) contribuem cada uma com o
    nó de maior score (empate dentro de 1e-12: menor id). Se houver menos de k
    comunidades, as vagas restantes vão para os melhores nós ainda não
    escolhidos, globalmente.

    Raises:
        PrototypeSelectionError: k < 1 ou k maior que o número de nós
    """
    n = g.n_nodes
    if k < 1 or k > n:
        raise PrototypeSelectionError(f"Cannot select {k} prototypes from {n} nodes")

    scores = landmark_scores(g, E, partition)
    members = partition.members()
    ranked = sorted(members, key=lambda community: (-len(members[community]), community))

    chosen: List[int] = []
    for community in ranked[:k]:
        positions = np.array([g.index[node] for node in members[community]], dtype=np.int64)
        best = scores[positions].max()
        tied = [g.node_ids[p] for p in positions if scores[p] >= best - SCORE_TOLERANCE]
        chosen.append(min(tied))

    if len(chosen) < k:
        taken = set(chosen)
        rest = sorted(
            (node for node in g.node_ids if node not in taken),
            key=lambda node: (-scores[g.index[node]], node),
        )
        chosen.extend(rest[: k - len(chosen)])

    prototypes = np.array([E.vector(node) for node in chosen], dtype=np.float64)
    logger.info("Prototypes selected", k=k, communities=partition.n_communities, landmarks=chosen)
    return UserPrototypeSet(prototypes=prototypes, source_nodes=tuple(chosen), alpha=alpha)


def _student_t(X: np.ndarray, B: np.ndarray, alpha: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Retorna (W, diferenças z − μ, distâncias ao quadrado)"""
    if X.shape[1] != B.shape[1]:
        raise ShapeMismatchError(f"soft_assign: shape mismatch {X.shape} vs {B.shape}")
    diff = X[:, None, :] - B[None, :, :]
    dist = np.sum(diff * diff, axis=2)
    kernel = (1.0 + dist / alpha) ** (-(alpha + 1.0) / 2.0)
    W = kernel / kernel.sum(axis=1, keepdims=True)
    return W, diff, dist


def sharpen(W: np.ndarray) -> np.ndarray:
    """
    W̃(j,k) = [W(j,k)² / f_k] / Σ_k' [W(j,k')² / f_k'], f_k = Σ_n W(n,k)

    Colunas com f_k = 0 ficam fora da normalização (entradas 0).
    """
    W = np.asarray(W, dtype=np.float64)
    freq = W.sum(axis=0)
    weighted = np.divide(W * W, freq, out=np.zeros_like(W), where=freq > 0)
    totals = weighted.sum(axis=1, keepdims=True)
    return np.divide(weighted, totals, out=np.zeros_like(W), where=totals > 0)


def soft_assign(E: EmbeddingTable, B: UserPrototypeSet) -> SoftAssignment:
    """Atribuição t-Student W e sua versão afiada W̃"""
    W, _, _ = _student_t(E.vectors, B.prototypes, B.alpha)
    return SoftAssignment(node_ids=E.node_ids, W=W, W_sharp=sharpen(W))


def clustering_loss(W: np.ndarray, W_sharp: np.ndarray) -> float:
    """
    KL(W̃ ‖ W) com 0·log(0/·) = 0

    Raises:
        ShapeMismatchError: Formatos diferentes
        ClusteringSupportError: W(j,k) = 0 com W̃(j,k) > 0
    """
    W = np.asarray(W, dtype=np.float64)
    W_sharp = np.asarray(W_sharp, dtype=np.float64)
    if W.shape != W_sharp.shape:
        raise ShapeMismatchError(f"clustering_loss: shape mismatch {W.shape} vs {W_sharp.shape}")
    support = W_sharp > 0
    if np.any(support & (W <= 0)):
        raise ClusteringSupportError("Target assigns mass where the model assignment is zero")
    ratio = np.divide(W_sharp, W, out=np.ones_like(W), where=support)
    return float(np.sum(np.where(support, W_sharp * np.log(ratio), 0.0)))


def clustering_gradient(X: np.ndarray, B: np.ndarray, W_sharp: np.ndarray, alpha: float) -> Tuple[float, np.ndarray]:
    """
    Perda KL(W̃ ‖ W(X)) e gradiente em relação a X, com W̃ e B fixos

    ∂L/∂z_j = Σ_k (W̃_jk − W_jk) · ((α+1)/α) · (z_j − μ_k) / (1 + ‖z_j − μ_k‖²/α)
    """
    W, diff, dist = _student_t(X, B, alpha)
    loss = clustering_loss(W, W_sharp)
    coef = (W_sharp - W) * ((alpha + 1.0) / alpha) / (1.0 + dist / alpha)
    grad = np.sum(coef[:, :, None] * diff, axis=1)
    return loss, grad


def refine_embeddings(
    E: EmbeddingTable,
    B: UserPrototypeSet,
    steps: int,
    lr: float,
    refresh_interval: int = 10,
) -> Tuple[EmbeddingTable, List[float]]:
    """
    Descida de gradiente em KL(W̃ ‖ W) sobre os embeddings dos usuários

    Os protótipos ficam congelados; W̃ é recalculado a cada `refresh_interval`
    passos e mantido fixo entre recálculos. A perda é registrada antes de cada
    passo.

    Returns:
        (embeddings refinados, perdas por passo)
    """
    X = E.vectors.copy()
    trace: List[float] = []
    W_sharp = None
    for step in range(steps):
        if step % refresh_interval == 0:
            W, _, _ = _student_t(X, B.prototypes, B.alpha)
            W_sharp = sharpen(W)
        loss, grad = clustering_gradient(X, B.prototypes, W_sharp, B.alpha)
        trace.append(loss)
        X = X - lr * grad

    if steps:
        logger.info("Embeddings refined", steps=steps, first_loss=trace[0], last_loss=trace[-1])
    return EmbeddingTable(node_ids=E.node_ids, vectors=X), trace


def assign_prototype(W: np.ndarray, user: int) -> int:
    """Índice do protótipo de maior W na linha `user` (empate: menor índice)"""
    return int(np.argmax(W[user]))


def assign_all(W: np.ndarray) -> np.ndarray:
    return np.argmax(W, axis=1)


@dataclass
class UserPrototypeFit:
    """Resultado da etapa de protótipos compartilhados"""
    partition: CommunityPartition
    prototypes: UserPrototypeSet
    embeddings: EmbeddingTable
    assignment: SoftAssignment
    loss_trace: List[float] = field(default_factory=list)


def prototype_users(
    g: InteractionGraph,
    E: EmbeddingTable,
    k: int,
    alpha: float = 1.0,
    refine_steps: int = 50,
    refine_lr: float = 0.01,
    refresh_interval: int = 10,
) -> UserPrototypeFit:
    """Comunidades → landmarks → refinamento → atribuição final"""
    partition = detect_communities(g)
    prototypes = select_prototypes(g, E, partition, k, alpha)
    refined, trace = refine_embeddings(E, prototypes, refine_steps, refine_lr, refresh_interval)
    return UserPrototypeFit(
        partition=partition,
        prototypes=prototypes,
        embeddings=refined,
        assignment=soft_assign(refined, prototypes),
        loss_trace=trace,
    )


def write_user_prototypes(prototypes: UserPrototypeSet, path: Path) -> None:
    """TSV `proto_idx<TAB>source_node<TAB>v_1…v_d`"""
    frame = pd.DataFrame(prototypes.prototypes)
    frame.insert(0, "source_node", list(prototypes.source_nodes))
    frame.insert(0, "proto_idx", np.arange(prototypes.k))
    frame.to_csv(path, sep="\t", index=False, header=False, float_format="%.9g")


def write_assignments(assignment: SoftAssignment, path: Path) -> None:
    """TSV `user_id<TAB>proto_idx<TAB>W_row…`"""
    frame = pd.DataFrame(assignment.W)
    frame.insert(0, "proto_idx", assign_all(assignment.W))
    frame.insert(0, "user_id", list(assignment.node_ids))
    frame.to_csv(path, sep="\t", index=False, header=False, float_format="%.9g")


def load_user_prototypes(path: Path, alpha: float = 1.0) -> UserPrototypeSet:
    if not path.exists():
        raise MissingArtifactError(f"Prototype artifact not found: {path}", path=str(path))
    frame = pd.read_csv(path, sep="\t", header=None).sort_values(0)
    return UserPrototypeSet(
        prototypes=frame.iloc[:, 2:].to_numpy(dtype=np.float64),
        source_nodes=tuple(int(node) for node in frame.iloc[:, 1]),
        alpha=alpha,
    )


def load_assignments(path: Path) -> SoftAssignment:
    """Lê W e recalcula W̃"""
    if not path.exists():
        raise MissingArtifactError(f"Assignment artifact not found: {path}", path=str(path))
    frame = pd.read_csv(path, sep="\t", header=None)
    W = frame.iloc[:, 2:].to_numpy(dtype=np.float64)
    W = W / W.sum(axis=1, keepdims=True)
    return SoftAssignment(
        node_ids=tuple(int(node) for node in frame.iloc[:, 0]),
        W=W,
        W_sharp=sharpen(W),
    )
