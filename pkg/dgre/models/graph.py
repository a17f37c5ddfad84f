"""
Modelos de grafo e de embeddings
"""
from functools import cached_property
from typing import Dict, List, Literal, Tuple

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, model_validator


class InteractionGraph(BaseModel):
    """
    Grafo não direcionado de co-interação (usuários ou itens)

    A adjacência é uma matriz CSR 0/1 simétrica, sem diagonal, indexada na
    ordem de `node_ids`.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    node_ids: Tuple[int, ...]
    adjacency: sp.csr_matrix
    kind: Literal["user", "item"] = "user"
    market: str = Field(default="", description="Mercado do grafo de itens; vazio no grafo global")

    @model_validator(mode="after")
    def _check_adjacency(self) -> "InteractionGraph":
        n = len(self.node_ids)
        if self.adjacency.shape != (n, n):
            raise ValueError(f"adjacency shape {self.adjacency.shape} does not match {n} nodes")
        if len(set(self.node_ids)) != n:
            raise ValueError("node ids must be unique")
        if self.adjacency.diagonal().any():
            raise ValueError("adjacency must have a zero diagonal")
        if (self.adjacency != self.adjacency.T).nnz:
            raise ValueError("adjacency must be symmetric")
        return self

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel().astype(np.float64)

    @property
    def edge_count(self) -> int:
        return int(self.adjacency.nnz // 2)

    @cached_property
    def index(self) -> Dict[int, int]:
        """node id -> posição interna"""
        return {node: position for position, node in enumerate(self.node_ids)}

    def edges(self) -> np.ndarray:
        """Arestas (i < j) em índices internos, ordenadas"""
        upper = sp.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        return np.stack([upper.row[order], upper.col[order]], axis=1).astype(np.int64)


class EmbeddingTable(BaseModel):
    """Mapa node id -> vetor denso de dimensão d"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    node_ids: Tuple[int, ...]
    vectors: np.ndarray

    @model_validator(mode="after")
    def _check_vectors(self) -> "EmbeddingTable":
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.node_ids):
            raise ValueError(
                f"vectors shape {self.vectors.shape} does not match {len(self.node_ids)} nodes"
            )
        if self.vectors.shape[1] < 1:
            raise ValueError("embedding dimension must be >= 1")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embeddings must be finite")
        return self

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    @cached_property
    def index(self) -> Dict[int, int]:
        return {node: position for position, node in enumerate(self.node_ids)}

    def vector(self, node: int) -> np.ndarray:
        return self.vectors[self.index[node]]

    def aligned_to(self, node_ids: Tuple[int, ...]) -> np.ndarray:
        """Matriz de vetores na ordem pedida (KeyError para nós ausentes)"""
        positions = [self.index[node] for node in node_ids]
        return self.vectors[positions]


class SageLayer(BaseModel):
    """Camada W^(k) de formato d_out x 2·d_in e sua ativação"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    weight: np.ndarray
    activation: Literal["relu", "identity"] = "relu"

    @property
    def d_in(self) -> int:
        return int(self.weight.shape[1] // 2)

    @property
    def d_out(self) -> int:
        return int(self.weight.shape[0])


class SageParameters(BaseModel):
    """Pilha de camadas de agregação por média"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    layers: List[SageLayer] = Field(default_factory=list)
    sample_size: int = Field(default=10, ge=1)

    @model_validator(mode="after")
    def _check_composition(self) -> "SageParameters":
        for previous, current in zip(self.layers, self.layers[1:]):
            if previous.d_out != current.d_in:
                raise ValueError(
                    f"layer dims do not compose: {previous.weight.shape} then {current.weight.shape}"
                )
        return self
