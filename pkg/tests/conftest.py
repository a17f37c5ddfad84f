"""
Fixtures compartilhadas dos testes
"""
from pathlib import Path
from typing import Iterable, Sequence, Tuple

import numpy as np
import pandas as pd
import pytest
import scipy.sparse as sp

from dgre.config import HeadSettings, ProtoSettings, SynthConfig, load_config
from dgre.models.data import Dataset, INTERACTION_COLUMNS
from dgre.models.graph import EmbeddingTable, InteractionGraph
from dgre.services.dataset import filter_min_interactions, generate_synthetic, leave_one_out_split

SMOKE_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "smoke.toml"


def build_dataset(rows: Iterable[Tuple[str, int, int, int]]) -> Dataset:
    """Dataset a partir de tuplas (market, user, item, timestamp)"""
    return Dataset.from_frame(pd.DataFrame(list(rows), columns=INTERACTION_COLUMNS))


def build_graph(
    node_ids: Sequence[int],
    edges: Iterable[Tuple[int, int]],
    kind: str = "user",
    market: str = "",
) -> InteractionGraph:
    """Grafo a partir de arestas em ids originais"""
    index = {node: position for position, node in enumerate(node_ids)}
    rows, cols = [], []
    for a, b in edges:
        rows += [index[a], index[b]]
        cols += [index[b], index[a]]
    n = len(node_ids)
    adjacency = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    adjacency.data[:] = 1.0
    adjacency.sort_indices()
    return InteractionGraph(node_ids=tuple(node_ids), adjacency=adjacency, kind=kind, market=market)


def clique_edges(nodes: Sequence[int]):
    return [(a, b) for position, a in enumerate(nodes) for b in nodes[position + 1:]]


@pytest.fixture
def make_dataset():
    return build_dataset


@pytest.fixture
def make_graph():
    return build_graph


@pytest.fixture
def two_cliques():
    """Dois 4-cliques disjuntos (nós 0-3 e 10-13)"""
    left, right = [0, 1, 2, 3], [10, 11, 12, 13]
    return build_graph(left + right, clique_edges(left) + clique_edges(right))


@pytest.fixture
def clustered_embeddings():
    """Embeddings 2-D: um cluster perto de (1, 0) e outro perto de (0, 1)"""
    rng = np.random.default_rng(3)
    left = np.array([1.0, 0.0]) + 0.05 * rng.normal(size=(4, 2))
    right = np.array([0.0, 1.0]) + 0.05 * rng.normal(size=(4, 2))
    return EmbeddingTable(node_ids=(0, 1, 2, 3, 10, 11, 12, 13), vectors=np.vstack([left, right]))


@pytest.fixture
def tiny_synth() -> SynthConfig:
    return SynthConfig(n_markets=2, users_per_market=20, n_items=40, n_groups=2, p_in=0.4, p_out=0.02)


@pytest.fixture
def tiny_split(tiny_synth):
    dataset = generate_synthetic(tiny_synth, seed=7)
    return leave_one_out_split(filter_min_interactions(dataset, 3), seed=7)


@pytest.fixture
def head_settings() -> HeadSettings:
    return HeadSettings(dim=4, epochs=3, lr=0.01, neg_per_pos=2, batch_size=64)


@pytest.fixture
def proto_settings() -> ProtoSettings:
    return ProtoSettings(k_proto=2, k_s=3, refine_steps=3, disc_epochs=5)


@pytest.fixture
def smoke_config(tmp_path):
    """Configuração mínima do pipeline completo apontando para tmp_path"""
    return load_config(
        str(SMOKE_CONFIG),
        out_dir=str(tmp_path / "run"),
    )
