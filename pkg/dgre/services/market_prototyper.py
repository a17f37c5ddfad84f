"""
Serviço de protótipos específicos de mercado: discriminador bilinear de
informação mútua, seleção de itens e pooling ponderado
"""
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
import structlog

from dgre.config import ProtoSettings
from dgre.core.exceptions import (
    DGREException,
    DiscriminatorError,
    GraphError,
    MissingArtifactError,
    PrototypeSelectionError,
    UnknownEntityError,
)
from dgre.core.numerics import PROB_CEIL, PROB_FLOOR, OptimizerState, adam_step, sigmoid
from dgre.models.data import Dataset
from dgre.models.graph import EmbeddingTable, InteractionGraph
from dgre.models.prototypes import Discriminator, MarketPrototype
from dgre.services.graph_builder import build_item_graph

logger = structlog.get_logger(__name__)

POOL_EPS = 1e-9


def _log_sigmoid(t) -> np.ndarray:
    return np.log(np.clip(sigmoid(t), PROB_FLOOR, PROB_CEIL))


def _log_one_minus_sigmoid(t) -> np.ndarray:
    return np.log(np.clip(1.0 - sigmoid(t), PROB_FLOOR, PROB_CEIL))


def neighborhood_means(g: InteractionGraph, Q: EmbeddingTable) -> np.ndarray:
    """q_{N_i} para todos os nós (D⁻¹ A Q), na ordem de `g.node_ids`"""
    X = Q.aligned_to(g.node_ids)
    degrees = g.degrees
    inverse = np.divide(1.0, degrees, out=np.zeros_like(degrees), where=degrees > 0)
    return sp.diags(inverse) @ (g.adjacency @ X)


def neighborhood_mean(g: InteractionGraph, Q: EmbeddingTable, i: int) -> np.ndarray:
    """
    Média dos embeddings dos vizinhos de i; vetor nulo para nós isolados

    Raises:
        UnknownEntityError: Item fora do grafo
    """
    position = g.index.get(i)
    if position is None:
        raise UnknownEntityError(f"Item {i} is not in the item graph of market '{g.market}'")
    start, end = g.adjacency.indptr[position], g.adjacency.indptr[position + 1]
    neigh = g.adjacency.indices[start:end]
    if len(neigh) == 0:
        return np.zeros(Q.dim)
    return Q.aligned_to(tuple(g.node_ids[j] for j in neigh)).mean(axis=0)


def mi_estimate(
    T: Discriminator,
    g: InteractionGraph,
    Q: EmbeddingTable,
    i: int,
    negative_pool: Iterable[int],
    rng: Optional[np.random.Generator] = None,
    n_samples: Optional[int] = None,
) -> float:
    """
    Î(i) = log σ(T(q_i, q_{N_i})) + média_j log(1 − σ(T(q_i, q_{N_j})))

    Args:
        negative_pool: Itens j cujas vizinhanças fazem o papel do produto das marginais
        rng: Gerador usado quando `n_samples` é dado
        n_samples: Amostra j do pool com reposição; None usa o pool inteiro

    Raises:
        DiscriminatorError: Pool de negativos vazio
    """
    pool = list(negative_pool)
    if not pool:
        raise DiscriminatorError("Negative pool is empty")
    if n_samples is not None:
        generator = rng if rng is not None else np.random.default_rng(0)
        pool = [pool[p] for p in generator.integers(0, len(pool), size=n_samples)]

    q_i = Q.vector(i)
    positive = T.score(q_i, neighborhood_mean(g, Q, i))
    negatives = np.array([neighborhood_mean(g, Q, j) for j in pool])
    negative_scores = T.score(q_i[None, :], negatives)
    return float(_log_sigmoid(positive) + np.mean(_log_one_minus_sigmoid(negative_scores)))


def _active_positions(g: InteractionGraph) -> np.ndarray:
    return np.flatnonzero(g.degrees > 0)


def score_items(T: Discriminator, g: InteractionGraph, Q: EmbeddingTable) -> np.ndarray:
    """
    Î de todos os itens usando como negativos todos os itens não isolados
    diferentes do próprio item

    Returns:
        Vetor na ordem de `g.node_ids`
    """
    X = Q.aligned_to(g.node_ids)
    N = neighborhood_means(g, Q)
    active = _active_positions(g)
    positive = T.score(X, N)
    cross = (X @ T.matrix) @ N[active].T + T.bias
    log_neg = _log_one_minus_sigmoid(cross)

    own = np.zeros((g.n_nodes, len(active)), dtype=bool)
    own[active, np.arange(len(active))] = True
    counts = len(active) - own.sum(axis=1)
    sums = np.where(own, 0.0, log_neg).sum(axis=1)
    mean_neg = np.divide(sums, counts, out=np.zeros(g.n_nodes), where=counts > 0)
    return _log_sigmoid(positive) + mean_neg


def discriminator_objective(
    M: np.ndarray,
    b: float,
    X: np.ndarray,
    N: np.ndarray,
    anchors: np.ndarray,
    others: np.ndarray,
) -> Tuple[float, np.ndarray, float]:
    """
    Média de log σ(T) nos pares (q_i, q_{N_i}) mais média de log(1 − σ(T)) nos
    pares (q_anchor, q_{N_other}), com gradientes em M e no bias

    Returns:
        (objetivo, ∂/∂M, ∂/∂bias)
    """
    t_pos = np.sum((X @ M) * N, axis=1) + b
    t_neg = np.sum((X[anchors] @ M) * N[others], axis=1) + b
    objective = float(np.mean(_log_sigmoid(t_pos)) + np.mean(_log_one_minus_sigmoid(t_neg)))

    g_pos = (1.0 - sigmoid(t_pos)) / len(t_pos)
    g_neg = -sigmoid(t_neg) / len(t_neg)
    grad_M = (X * g_pos[:, None]).T @ N + (X[anchors] * g_neg[:, None]).T @ N[others]
    grad_b = float(np.sum(g_pos) + np.sum(g_neg))
    return objective, grad_M, grad_b


def train_discriminator(
    g: InteractionGraph,
    Q: EmbeddingTable,
    epochs: int = 100,
    lr: float = 0.01,
    neg_per_pos: int = 1,
    seed: int = 0,
) -> Discriminator:
    """
    Maximiza a média de Î sobre M e bias com Adam (lote completo)

    Positivos são (q_i, q_{N_i}) dos nós não isolados; negativos pareiam q_i com
    q_{N_j} de j ≠ i uniforme entre os não isolados, reamostrados a cada época.
    M parte de zero, ou seja, T ≡ 0 na inicialização.

    Raises:
        DiscriminatorError: Menos de dois nós não isolados
    """
    active = _active_positions(g)
    if len(active) < 2:
        raise DiscriminatorError(
            f"Item graph of market '{g.market}' has {len(active)} non-isolated nodes, at least 2 are needed"
        )

    rng = np.random.default_rng(seed)
    X = Q.aligned_to(g.node_ids)[active]
    N = neighborhood_means(g, Q)[active]
    dim = X.shape[1]
    params = {"M": np.zeros((dim, dim)), "b": np.zeros(1)}
    state = OptimizerState(lr=lr)
    trace: List[float] = []
    n = len(active)

    for _ in range(epochs):
        anchors = np.repeat(np.arange(n), neg_per_pos)
        draw = rng.integers(0, n - 1, size=len(anchors))
        others = draw + (draw >= anchors)

        objective, grad_M, grad_b = discriminator_objective(params["M"], float(params["b"][0]), X, N, anchors, others)
        trace.append(objective)
        params, state = adam_step(params, {"M": -grad_M, "b": -np.array([grad_b])}, state)

    discriminator = Discriminator(matrix=params["M"], bias=float(params["b"][0]), objective_trace=tuple(trace))
    logger.info(
        "Discriminator trained",
        market=g.market,
        active_items=n,
        epochs=epochs,
        first_objective=trace[0] if trace else None,
        last_objective=trace[-1] if trace else None,
    )
    return discriminator


def select_items(
    g: InteractionGraph,
    Q: EmbeddingTable,
    T: Discriminator,
    k_s: int,
) -> Dict[int, float]:
    """
    Top-k_s itens por Î (empate: menor id)

    O objetivo Σ_{v∈S} Î(v) é aditivo, então o guloso coincide com o top-k.
    Faltando itens não isolados, completa com itens isolados por norma do
    embedding decrescente. k_s acima do número de itens é reduzido com aviso.

    Returns:
        item -> Î(item), na ordem de seleção

    Raises:
        GraphError: Grafo sem nós
    """
    if g.n_nodes == 0:
        raise GraphError(f"Item graph of market '{g.market}' is empty")
    if k_s > g.n_nodes:
        logger.warning("k_s exceeds the number of items, clamping", market=g.market, k_s=k_s, items=g.n_nodes)
        k_s = g.n_nodes

    scores = score_items(T, g, Q)
    active = set(_active_positions(g).tolist())
    ranked = sorted(active, key=lambda p: (-scores[p], g.node_ids[p]))
    chosen = ranked[:k_s]
    if len(chosen) < k_s:
        norms = np.linalg.norm(Q.aligned_to(g.node_ids), axis=1)
        isolated = sorted(
            (p for p in range(g.n_nodes) if p not in active),
            key=lambda p: (-norms[p], g.node_ids[p]),
        )
        chosen.extend(isolated[: k_s - len(chosen)])
    return {g.node_ids[p]: float(scores[p]) for p in chosen}


def pool_prototype(selected: Mapping[int, float], Q: EmbeddingTable, market: str = "") -> MarketPrototype:
    """
    c_l = Σ Î(v) q_v / Σ Î(v), com média simples quando |Σ Î(v)| < 1e-9

    Raises:
        PrototypeSelectionError: Nenhum item selecionado
    """
    if not selected:
        raise PrototypeSelectionError(f"No items selected for market '{market}'")
    items = tuple(selected)
    weights = np.array([selected[item] for item in items], dtype=np.float64)
    vectors = Q.aligned_to(items)
    total = weights.sum()
    if abs(total) < POOL_EPS:
        vector = vectors.mean(axis=0)
    else:
        vector = (weights[:, None] * vectors).sum(axis=0) / total
    return MarketPrototype(market=market, vector=vector, selected_items=dict(selected))


def build_market_prototype(
    g: InteractionGraph,
    Q: EmbeddingTable,
    config: ProtoSettings,
    seed: int,
) -> MarketPrototype:
    """Discriminador → seleção → pooling para um mercado"""
    T = train_discriminator(g, Q, config.disc_epochs, config.disc_lr, config.disc_neg_per_pos, seed)
    selected = select_items(g, Q, T, config.k_s)
    prototype = pool_prototype(selected, Q, market=g.market)
    logger.info("Market prototype built", market=g.market, selected=len(selected))
    return prototype


def build_all_market_prototypes(
    train: Dataset,
    tables: Mapping[str, EmbeddingTable],
    config: ProtoSettings,
    seed: int = 0,
    graphs: Optional[Mapping[str, InteractionGraph]] = None,
    min_common_users: int = 2,
    executor=None,
) -> Tuple[Dict[str, MarketPrototype], Dict[str, str]]:
    """
    Protótipo de cada mercado, de forma independente

    Todos os mercados usam a mesma semente, então dados idênticos geram
    protótipos idênticos. Um mercado que falha é registrado e os demais
    seguem.

    Returns:
        (mercado -> protótipo, mercado -> mensagem de erro)
    """
    def run(market: str):
        try:
            graph = graphs[market] if graphs is not None else build_item_graph(train, market, min_common_users)
            return market, build_market_prototype(graph, tables[market], config, seed), None
        except DGREException as e:
            logger.error("Market prototype failed", market=market, error=e.message, error_code=e.error_code.value)
            return market, None, e.message

    markets = list(train.markets)
    results = executor.map(run, markets) if executor is not None else [run(market) for market in markets]
    prototypes = {market: proto for market, proto, _ in results if proto is not None}
    failures = {market: message for market, _, message in results if message is not None}
    return prototypes, failures


def write_market_prototypes(prototypes: Mapping[str, MarketPrototype], directory: Path) -> List[str]:
    """Grava `market_prototypes.tsv` (market, v_1…v_d) e `selected_items.tsv` (market, item_id, mi_score)"""
    directory.mkdir(parents=True, exist_ok=True)
    markets = list(prototypes)
    vectors = pd.DataFrame([prototypes[market].vector for market in markets])
    vectors.insert(0, "market", markets)
    vectors.to_csv(directory / "market_prototypes.tsv", sep="\t", index=False, header=False, float_format="%.9g")
    rows = [
        (market, item, score)
        for market in markets
        for item, score in prototypes[market].selected_items.items()
    ]
    pd.DataFrame(rows, columns=["market", "item_id", "mi_score"]).to_csv(
        directory / "selected_items.tsv", sep="\t", index=False, header=False, float_format="%.9g"
    )
    return ["market_prototypes.tsv", "selected_items.tsv"]


def load_market_prototypes(directory: Path) -> Dict[str, MarketPrototype]:
    vectors_path = directory / "market_prototypes.tsv"
    selected_path = directory / "selected_items.tsv"
    for path in (vectors_path, selected_path):
        if not path.exists():
            raise MissingArtifactError(f"Market prototype artifact not found: {path}", path=str(path))

    if vectors_path.stat().st_size == 0:
        return {}
    vectors = pd.read_csv(vectors_path, sep="\t", header=None, dtype={0: str}, keep_default_na=False)
    selected: Dict[str, Dict[int, float]] = {}
    if selected_path.stat().st_size:
        frame = pd.read_csv(selected_path, sep="\t", header=None, dtype={0: str}, keep_default_na=False)
        for market, item, score in frame.itertuples(index=False):
            selected.setdefault(market, {})[int(item)] = float(score)
    return {
        str(row[0]): MarketPrototype(
            market=str(row[0]),
            vector=np.asarray(row[1:], dtype=np.float64),
            selected_items=selected.get(str(row[0]), {}),
        )
        for row in vectors.itertuples(index=False)
    }
