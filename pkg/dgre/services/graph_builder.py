"""
Serviço de construção dos grafos de co-interação
"""
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sp
import structlog

from dgre.core.exceptions import GraphError, MissingArtifactError, UnknownEntityError, UnknownMarketError
from dgre.models.data import Dataset
from dgre.models.graph import InteractionGraph

logger = structlog.get_logger(__name__)


def _incidence(rows: np.ndarray, cols: np.ndarray, row_ids: Sequence[int], col_ids: Sequence[int]) -> sp.csr_matrix:
    """Matriz 0/1 linhas x colunas a partir de pares (linha, coluna) em ids originais"""
    row_pos = np.searchsorted(np.asarray(row_ids, dtype=np.int64), rows)
    col_pos = np.searchsorted(np.asarray(col_ids, dtype=np.int64), cols)
    data = np.ones(len(rows), dtype=np.float64)
    matrix = sp.csr_matrix((data, (row_pos, col_pos)), shape=(len(row_ids), len(col_ids)))
    matrix.data[:] = 1.0
    return matrix


def _threshold_cooccurrence(incidence: sp.csr_matrix, threshold: int) -> sp.csr_matrix:
    """A = [X Xᵀ >= threshold] sem diagonal"""
    counts = sp.csr_matrix(incidence @ incidence.T)
    counts = sp.csr_matrix(counts - sp.diags(counts.diagonal()))
    counts.eliminate_zeros()
    counts.data = (counts.data >= threshold).astype(np.float64)
    counts.eliminate_zeros()
    adjacency = sp.csr_matrix(counts)
    adjacency.sort_indices()
    return adjacency


def build_user_graph(train: Dataset, min_common_items: int = 2) -> InteractionGraph:
    """
    Grafo global de usuários: aresta quando dois usuários têm ao menos
    `min_common_items` itens em comum

    Todos os usuários de todos os mercados são nós; usuários isolados ficam
    com grau 0.

    Raises:
        GraphError: Dataset de treino vazio
    """
    if len(train) == 0:
        raise GraphError("Cannot build a user graph from an empty training set")

    users = train.all_users
    frame = train.interactions
    incidence = _incidence(
        frame["user"].to_numpy(dtype=np.int64),
        frame["item"].to_numpy(dtype=np.int64),
        users,
        train.items,
    )
    adjacency = _threshold_cooccurrence(incidence, min_common_items)
    graph = InteractionGraph(node_ids=tuple(users), adjacency=adjacency, kind="user")

    logger.info(
        "User graph built",
        nodes=graph.n_nodes,
        edges=graph.edge_count,
        isolated=int((graph.degrees == 0).sum()),
        min_common_items=min_common_items,
    )
    return graph


def build_item_graph(train: Dataset, market: str, min_common_users: int = 2) -> InteractionGraph:
    """
    Grafo de itens de um mercado: aresta quando ao menos `min_common_users`
    usuários do mercado interagiram com ambos os itens

    Raises:
        UnknownMarketError: Mercado ausente do treino
    """
    if market not in train.markets:
        raise UnknownMarketError(f"Unknown market '{market}'")

    frame = train.market_frame(market)
    users = np.unique(frame["user"].to_numpy(dtype=np.int64))
    items = np.unique(frame["item"].to_numpy(dtype=np.int64))
    incidence = _incidence(
        frame["user"].to_numpy(dtype=np.int64),
        frame["item"].to_numpy(dtype=np.int64),
        users,
        items,
    )
    adjacency = _threshold_cooccurrence(sp.csr_matrix(incidence.T), min_common_users)
    graph = InteractionGraph(
        node_ids=tuple(int(item) for item in items),
        adjacency=adjacency,
        kind="item",
        market=market,
    )

    logger.info(
        "Item graph built",
        market=market,
        nodes=graph.n_nodes,
        edges=graph.edge_count,
        min_common_users=min_common_users,
    )
    return graph


def build_item_graphs(
    train: Dataset,
    min_common_users: int = 2,
    executor=None,
) -> Dict[str, InteractionGraph]:
    """Grafos de itens de todos os mercados (em paralelo quando há executor)"""
    markets = list(train.markets)
    if executor is None:
        graphs = [build_item_graph(train, market, min_common_users) for market in markets]
    else:
        graphs = executor.map(lambda market: build_item_graph(train, market, min_common_users), markets)
    return dict(zip(markets, graphs))


def neighbors(g: InteractionGraph, v: int) -> List[int]:
    """
    Vizinhos de um nó, ordenados por id

    Raises:
        UnknownEntityError: Nó fora do grafo
    """
    position = g.index.get(v)
    if position is None:
        raise UnknownEntityError(f"Node {v} is not in the {g.kind} graph")
    start, end = g.adjacency.indptr[position], g.adjacency.indptr[position + 1]
    return sorted(g.node_ids[j] for j in g.adjacency.indices[start:end])


def write_graph(g: InteractionGraph, directory: Path) -> List[str]:
    """
    Grava `edges.tsv` (índices internos, i < j) e `node_index.tsv`

    Returns:
        Nomes dos arquivos gravados
    """
    directory.mkdir(parents=True, exist_ok=True)
    edges = g.edges()
    pd.DataFrame(edges, columns=["node_a", "node_b"]).to_csv(
        directory / "edges.tsv", sep="\t", index=False, header=False
    )
    pd.DataFrame({"index": np.arange(g.n_nodes), "node_id": list(g.node_ids)}).to_csv(
        directory / "node_index.tsv", sep="\t", index=False, header=False
    )
    return ["edges.tsv", "node_index.tsv"]


def load_graph(directory: Path, kind: str = "user", market: str = "") -> InteractionGraph:
    """
    Lê um grafo gravado por `write_graph`

    Raises:
        MissingArtifactError: Arquivos ausentes
    """
    edges_path = directory / "edges.tsv"
    index_path = directory / "node_index.tsv"
    for path in (edges_path, index_path):
        if not path.exists():
            raise MissingArtifactError(f"Graph artifact not found: {path}", path=str(path))

    nodes = pd.read_csv(index_path, sep="\t", header=None, names=["index", "node_id"])
    nodes = nodes.sort_values("index")
    n = len(nodes)
    if edges_path.stat().st_size:
        edges = pd.read_csv(edges_path, sep="\t", header=None, names=["a", "b"]).to_numpy(dtype=np.int64)
    else:
        edges = np.zeros((0, 2), dtype=np.int64)

    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adjacency = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    adjacency.sort_indices()
    return InteractionGraph(
        node_ids=tuple(int(node) for node in nodes["node_id"]),
        adjacency=adjacency,
        kind=kind,
        market=market,
    )
