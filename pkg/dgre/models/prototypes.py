"""
Modelos dos protótipos compartilhados (usuários) e específicos (mercados)
"""
from typing import Dict, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class CommunityPartition(BaseModel):
    """Atribuição nó -> comunidade com índices contíguos a partir de 0"""
    model_config = ConfigDict(frozen=True)

    assignment: Dict[int, int]

    @model_validator(mode="after")
    def _check_contiguous(self) -> "CommunityPartition":
        labels = set(self.assignment.values())
        if labels != set(range(len(labels))):
            raise ValueError("community indices must be contiguous from 0")
        return self

    @property
    def n_communities(self) -> int:
        return len(set(self.assignment.values()))

    def members(self) -> Dict[int, Tuple[int, ...]]:
        """Comunidade -> nós (ordenados)"""
        grouped: Dict[int, list] = {}
        for node, community in sorted(self.assignment.items()):
            grouped.setdefault(community, []).append(node)
        return {community: tuple(nodes) for community, nodes in grouped.items()}


class UserPrototypeSet(BaseModel):
    """Protótipos B = [b_1 ... b_k] e o usuário-landmark de cada um"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    prototypes: np.ndarray
    source_nodes: Tuple[int, ...]
    alpha: float = Field(default=1.0, gt=0.0, description="Graus de liberdade da t-Student")

    @model_validator(mode="after")
    def _check_shape(self) -> "UserPrototypeSet":
        if self.prototypes.ndim != 2 or self.prototypes.shape[0] < 1:
            raise ValueError("at least one prototype is required")
        if self.prototypes.shape[0] != len(self.source_nodes):
            raise ValueError("one source node per prototype is required")
        return self

    @property
    def k(self) -> int:
        return int(self.prototypes.shape[0])

    @property
    def dim(self) -> int:
        return int(self.prototypes.shape[1])


class SoftAssignment(BaseModel):
    """W (t-Student) e W̃ (versão afiada), ambas n x k e estocásticas por linha"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    node_ids: Tuple[int, ...]
    W: np.ndarray
    W_sharp: np.ndarray

    @model_validator(mode="after")
    def _check_rows(self) -> "SoftAssignment":
        for name, matrix in (("W", self.W), ("W_sharp", self.W_sharp)):
            if matrix.shape != (len(self.node_ids), self.W.shape[1]):
                raise ValueError(f"{name} has shape {matrix.shape}")
            if matrix.size and (matrix.min() < 0 or not np.allclose(matrix.sum(axis=1), 1.0, atol=1e-6)):
                raise ValueError(f"{name} must be row-stochastic")
        return self


class Discriminator(BaseModel):
    """T(q_i, q_N) = q_iᵀ M q_N + bias"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    matrix: np.ndarray
    bias: float = 0.0
    objective_trace: Tuple[float, ...] = Field(
        default=(),
        description="Média de Î por época durante o treino"
    )

    @model_validator(mode="after")
    def _check_square(self) -> "Discriminator":
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError(f"discriminator matrix must be square, got {self.matrix.shape}")
        return self

    @classmethod
    def zeros(cls, dim: int) -> "Discriminator":
        return cls(matrix=np.zeros((dim, dim)))

    def score(self, q_i: np.ndarray, q_n: np.ndarray) -> np.ndarray:
        """Escore bilinear; aceita vetores ou lotes (linhas)"""
        return np.sum((q_i @ self.matrix) * q_n, axis=-1) + self.bias


class MarketPrototype(BaseModel):
    """Protótipo c_l (= o_l) de um mercado e os itens selecionados"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    market: str
    vector: np.ndarray
    selected_items: Dict[int, float] = Field(
        default_factory=dict,
        description="Item selecionado -> Î(item)"
    )
