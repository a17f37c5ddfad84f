"""
Serviço de embeddings: camadas de agregação por média com vizinhos amostrados,
treinadas por predição de arestas com amostragem negativa
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
import structlog

from dgre.core.exceptions import MissingArtifactError, ShapeMismatchError, UnknownEntityError
from dgre.core.numerics import (
    OptimizerState,
    adam_step,
    glorot_normal,
    l2_normalize_rows,
    relu,
    sgd_step,
    sigmoid,
)
from dgre.models.graph import EmbeddingTable, InteractionGraph, SageLayer, SageParameters

logger = structlog.get_logger(__name__)

INIT_STD = 0.1
NORM_EPS = 1e-12


def aggregate_mean(neighbor_vectors: Sequence[np.ndarray], dim: Optional[int] = None) -> np.ndarray:
    """
    Média elemento a elemento dos vetores vizinhos

    Args:
        neighbor_vectors: Vetores de mesmo comprimento (lista pode ser vazia)
        dim: Comprimento do vetor nulo devolvido quando a lista é vazia

    Raises:
        ShapeMismatchError: Comprimentos diferentes, ou lista vazia sem `dim`
    """
    vectors = [np.asarray(vector, dtype=np.float64) for vector in neighbor_vectors]
    if not vectors:
        if dim is None:
            raise ShapeMismatchError("aggregate_mean: empty neighborhood needs an explicit dim")
        return np.zeros(dim)
    lengths = {vector.shape for vector in vectors}
    if len(lengths) != 1:
        shapes = sorted(lengths)
        raise ShapeMismatchError(f"aggregate_mean: shape mismatch {shapes[0]} vs {shapes[-1]}")
    return np.mean(np.stack(vectors), axis=0)


def sample_operator(g: InteractionGraph, sample_size: int, rng: np.random.Generator) -> sp.csr_matrix:
    """
    Operador de média amostrada S (n x n)

    A linha v tem peso 1/s_v em cada um dos s_v = min(sample_size, grau) vizinhos
    amostrados sem reposição; linhas de nós isolados são nulas. Nós são
    visitados em ordem e o gerador só é consumido quando o grau excede
    `sample_size`.
    """
    adjacency = g.adjacency
    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    vals: List[np.ndarray] = []
    for v in range(g.n_nodes):
        neigh = adjacency.indices[adjacency.indptr[v]:adjacency.indptr[v + 1]]
        if len(neigh) == 0:
            continue
        if len(neigh) > sample_size:
            neigh = np.sort(rng.choice(neigh, size=sample_size, replace=False))
        rows.append(np.full(len(neigh), v))
        cols.append(neigh)
        vals.append(np.full(len(neigh), 1.0 / len(neigh)))
    if not rows:
        return sp.csr_matrix((g.n_nodes, g.n_nodes))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(g.n_nodes, g.n_nodes),
    )


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    return relu(z) if activation == "relu" else z


def _layer_forward(x: np.ndarray, operator: sp.csr_matrix, weight: np.ndarray, activation: str):
    if weight.shape[1] != 2 * x.shape[1]:
        raise ShapeMismatchError(
            f"sage layer: shape mismatch {weight.shape} vs (d_out, {2 * x.shape[1]})"
        )
    h = np.hstack([x, operator @ x])
    z = h @ weight.T
    return h, z, _activate(z, activation)


def _aligned(g: InteractionGraph, E: EmbeddingTable) -> np.ndarray:
    try:
        return E.aligned_to(g.node_ids)
    except KeyError as e:
        raise UnknownEntityError(f"Embedding table does not cover node {e.args[0]}")


def sage_layer(
    g: InteractionGraph,
    E: EmbeddingTable,
    layer: SageLayer,
    rng: np.random.Generator,
    sample_size: int = 10,
) -> EmbeddingTable:
    """
    Uma camada: new_v = σ(W · [e_v ‖ média dos vizinhos amostrados])

    Raises:
        ShapeMismatchError: W não tem 2·dim(E) colunas
        UnknownEntityError: E não cobre algum nó do grafo
    """
    x = _aligned(g, E)
    operator = sample_operator(g, sample_size, rng)
    _, _, out = _layer_forward(x, operator, layer.weight, layer.activation)
    return EmbeddingTable(node_ids=g.node_ids, vectors=out)


def encode(
    g: InteractionGraph,
    E0: EmbeddingTable,
    params: SageParameters,
    rng: np.random.Generator,
) -> EmbeddingTable:
    """Composição das camadas seguida de normalização L2 das linhas"""
    table = EmbeddingTable(node_ids=g.node_ids, vectors=_aligned(g, E0))
    for layer in params.layers:
        table = sage_layer(g, table, layer, rng, params.sample_size)
    return EmbeddingTable(node_ids=g.node_ids, vectors=l2_normalize_rows(table.vectors, NORM_EPS))


@dataclass
class LinkPlan:
    """Operadores amostrados e pares fixos de um passo de otimização"""
    operators: List[sp.csr_matrix]
    activations: List[str]
    positives: np.ndarray
    negatives: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    @property
    def n_pos(self) -> int:
        return int(len(self.positives))


def link_prediction_loss(
    E0: np.ndarray,
    weights: Sequence[np.ndarray],
    plan: LinkPlan,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Perda de predição de arestas e gradientes analíticos

    L = (Σ_pos −log σ(z_u·z_v) + Σ_neg −log σ(−z_u·z_n)) / n_pos, com z as
    saídas normalizadas do codificador.

    Returns:
        (perda, gradientes com chaves "E0" e "W0".."W{L-1}")
    """
    xs = [E0]
    caches = []
    for weight, operator, activation in zip(weights, plan.operators, plan.activations):
        h, z, out = _layer_forward(xs[-1], operator, weight, activation)
        caches.append((h, z))
        xs.append(out)

    x_last = xs[-1]
    norms = np.linalg.norm(x_last, axis=1, keepdims=True)
    live = norms > NORM_EPS
    safe = np.where(live, norms, 1.0)
    y = x_last / safe

    n_pos = max(plan.n_pos, 1)
    pos, neg = plan.positives, plan.negatives
    pos_scores = np.sum(y[pos[:, 0]] * y[pos[:, 1]], axis=1)
    neg_scores = np.sum(y[neg[:, 0]] * y[neg[:, 1]], axis=1)
    loss = (np.sum(np.logaddexp(0.0, -pos_scores)) + np.sum(np.logaddexp(0.0, neg_scores))) / n_pos

    coef_pos = (sigmoid(pos_scores) - 1.0) / n_pos
    coef_neg = sigmoid(neg_scores) / n_pos
    grad_y = np.zeros_like(y)
    for pairs, coef in ((pos, coef_pos), (neg, coef_neg)):
        if len(pairs) == 0:
            continue
        coef = np.atleast_1d(coef)[:, None]
        np.add.at(grad_y, pairs[:, 0], coef * y[pairs[:, 1]])
        np.add.at(grad_y, pairs[:, 1], coef * y[pairs[:, 0]])

    radial = np.sum(y * grad_y, axis=1, keepdims=True)
    grad_x = np.where(live, (grad_y - y * radial) / safe, grad_y)

    grads: Dict[str, np.ndarray] = {}
    for k in range(len(weights) - 1, -1, -1):
        h, z = caches[k]
        d = xs[k].shape[1]
        grad_z = grad_x * (z > 0) if plan.activations[k] == "relu" else grad_x
        grads[f"W{k}"] = grad_z.T @ h
        grad_h = grad_z @ weights[k]
        grad_x = grad_h[:, :d] + plan.operators[k].T @ grad_h[:, d:]
    grads["E0"] = grad_x
    return float(loss), grads


def sample_link_negatives(
    positives: np.ndarray,
    n_nodes: int,
    neg_per_pos: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Para cada aresta (u, v), `neg_per_pos` pares (u, n) com n uniforme fora de {u, v}

    Grafos com até dois nós não têm negativos.
    """
    if neg_per_pos == 0 or n_nodes <= 2 or len(positives) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    u = np.repeat(positives[:, 0], neg_per_pos)
    v = np.repeat(positives[:, 1], neg_per_pos)
    lo, hi = np.minimum(u, v), np.maximum(u, v)
    draw = rng.integers(0, n_nodes - 2, size=len(u))
    draw = draw + (draw >= lo)
    draw = draw + (draw >= hi)
    return np.stack([u, draw], axis=1).astype(np.int64)


def init_parameters(dim: int, n_layers: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Pesos Glorot d x 2d por camada"""
    return [glorot_normal(rng, dim, 2 * dim) for _ in range(n_layers)]


def layer_activations(n_layers: int) -> List[str]:
    """ReLU nas camadas ocultas, identidade na última"""
    return ["relu"] * max(0, n_layers - 1) + ["identity"] * min(1, n_layers)


def to_sage_parameters(weights: Sequence[np.ndarray], sample_size: int) -> SageParameters:
    activations = layer_activations(len(weights))
    return SageParameters(
        layers=[SageLayer(weight=w, activation=a) for w, a in zip(weights, activations)],
        sample_size=sample_size,
    )


@dataclass
class EmbeddingFit:
    """Resultado do treino não supervisionado"""
    table: EmbeddingTable
    params: SageParameters
    initial: EmbeddingTable
    losses: List[float] = field(default_factory=list)
    degenerate: bool = False


def train_unsupervised(
    g: InteractionGraph,
    dim: int = 32,
    n_layers: int = 2,
    epochs: int = 20,
    lr: float = 0.01,
    neg_per_pos: int = 5,
    seed: int = 0,
    sample_size: int = 10,
    batch_size: int = 512,
    optimizer: str = "adam",
) -> EmbeddingFit:
    """
    Treina E0 e as camadas por predição de arestas e devolve os embeddings codificados

    Args:
        g: Grafo (usuários ou itens de um mercado)
        dim: Dimensão d de todas as camadas
        n_layers: Número de camadas de agregação
        epochs: Passadas sobre as arestas
        lr: Learning rate
        neg_per_pos: Negativos uniformes por aresta
        seed: Semente (inicialização, embaralhamento, amostragem)
        sample_size: Vizinhos amostrados por nó e camada
        batch_size: Arestas por passo
        optimizer: "adam" ou "sgd"

    Returns:
        EmbeddingFit; grafos sem arestas devolvem E0 normalizado com `degenerate=True`
    """
    rng = np.random.default_rng(seed)
    E0 = rng.normal(0.0, INIT_STD, size=(g.n_nodes, dim))
    weights = init_parameters(dim, n_layers, rng)
    activations = layer_activations(n_layers)
    initial = EmbeddingTable(node_ids=g.node_ids, vectors=E0.copy())

    if g.edge_count == 0:
        logger.warning("Graph has no edges, returning normalized random embeddings", kind=g.kind, market=g.market, nodes=g.n_nodes)
        return EmbeddingFit(
            table=EmbeddingTable(node_ids=g.node_ids, vectors=l2_normalize_rows(E0, NORM_EPS)),
            params=to_sage_parameters(weights, sample_size),
            initial=initial,
            degenerate=True,
        )

    edges = g.edges()
    params = {"E0": E0, **{f"W{k}": w for k, w in enumerate(weights)}}
    state = OptimizerState(lr=lr)
    losses: List[float] = []

    for epoch in range(epochs):
        order = rng.permutation(len(edges))
        total = 0.0
        for start in range(0, len(edges), batch_size):
            positives = edges[order[start:start + batch_size]]
            plan = LinkPlan(
                operators=[sample_operator(g, sample_size, rng) for _ in range(n_layers)],
                activations=activations,
                positives=positives,
                negatives=sample_link_negatives(positives, g.n_nodes, neg_per_pos, rng),
            )
            layer_weights = [params[f"W{k}"] for k in range(n_layers)]
            loss, grads = link_prediction_loss(params["E0"], layer_weights, plan)
            total += loss * len(positives)
            if optimizer == "sgd":
                params = sgd_step(params, grads, lr)
            else:
                params, state = adam_step(params, grads, state)
        losses.append(total / len(edges))
        logger.debug("Embedding epoch", kind=g.kind, market=g.market, epoch=epoch + 1, loss=losses[-1])

    sage = to_sage_parameters([params[f"W{k}"] for k in range(n_layers)], sample_size)
    table = encode(g, EmbeddingTable(node_ids=g.node_ids, vectors=params["E0"]), sage, rng)
    logger.info(
        "Embeddings trained",
        kind=g.kind,
        market=g.market,
        nodes=g.n_nodes,
        edges=g.edge_count,
        epochs=epochs,
        final_loss=losses[-1] if losses else None,
    )
    return EmbeddingFit(
        table=table,
        params=sage,
        initial=EmbeddingTable(node_ids=g.node_ids, vectors=params["E0"]),
        losses=losses,
    )


def write_embeddings(table: EmbeddingTable, path: Path) -> None:
    """TSV `node_id<TAB>v_1<TAB>…<TAB>v_d` com 9 dígitos significativos"""
    frame = pd.DataFrame(table.vectors)
    frame.insert(0, "node_id", list(table.node_ids))
    frame.to_csv(path, sep="\t", index=False, header=False, float_format="%.9g")


def load_embeddings(path: Path) -> EmbeddingTable:
    """
    Lê uma tabela gravada por `write_embeddings`

    Raises:
        MissingArtifactError: Arquivo ausente
    """
    if not path.exists():
        raise MissingArtifactError(f"Embedding artifact not found: {path}", path=str(path))
    frame = pd.read_csv(path, sep="\t", header=None)
    return EmbeddingTable(
        node_ids=tuple(int(node) for node in frame.iloc[:, 0]),
        vectors=frame.iloc[:, 1:].to_numpy(dtype=np.float64),
    )
