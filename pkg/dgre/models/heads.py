"""
Modelos dos heads de recomendação (GMF, MLP, NMF)
"""
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator


class HeadFamily(str, Enum):
    """Arquitetura do head"""
    GMF = "gmf"
    MLP = "mlp"
    NMF = "nmf"


class HeadVariant(str, Enum):
    """Variante: sem protótipos, com protótipos ou one-hot de mercado"""
    BASE = "base"
    DGRE = "dgre"
    MA = "ma"


class HeadKind(BaseModel):
    """Par (família, variante), ex.: dgre-gmf"""
    model_config = ConfigDict(frozen=True)

    family: HeadFamily
    variant: HeadVariant = HeadVariant.BASE

    @property
    def tag(self) -> str:
        return f"{self.variant.value}-{self.family.value}"

    @classmethod
    def parse(cls, tag: str) -> "HeadKind":
        variant, family = tag.split("-", 1)
        return cls(family=HeadFamily(family), variant=HeadVariant(variant))

    @property
    def uses_prototypes(self) -> bool:
        return self.variant == HeadVariant.DGRE

    @property
    def market_aware(self) -> bool:
        return self.variant == HeadVariant.MA

    @property
    def has_gmf_branch(self) -> bool:
        return self.family in (HeadFamily.GMF, HeadFamily.NMF)

    @property
    def has_mlp_branch(self) -> bool:
        return self.family in (HeadFamily.MLP, HeadFamily.NMF)


class PrototypeContext(BaseModel):
    """
    Protótipos vistos pelo head

    `user_prototypes[u]` é b_K(u) na ordem de `users`; `market_prototypes[l]`
    é o_l na ordem de `markets`. Um lado desabilitado vira o vetor de uns,
    identidade do produto ⊙.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    users: Tuple[int, ...]
    markets: Tuple[str, ...]
    user_prototypes: np.ndarray
    market_prototypes: np.ndarray
    use_shared: bool = True
    use_market: bool = True

    @model_validator(mode="after")
    def _check_shapes(self) -> "PrototypeContext":
        if self.user_prototypes.shape[0] != len(self.users):
            raise ValueError("one user prototype row per user is required")
        if self.market_prototypes.shape[0] != len(self.markets):
            raise ValueError("one market prototype row per market is required")
        if self.user_prototypes.shape[1] != self.market_prototypes.shape[1]:
            raise ValueError("user and market prototypes must share the head dimension")
        return self

    @property
    def dim(self) -> int:
        return int(self.user_prototypes.shape[1])

    @classmethod
    def disabled(cls, users: Tuple[int, ...], markets: Tuple[str, ...], dim: int) -> "PrototypeContext":
        """Contexto neutro (heads base)"""
        return cls(
            users=tuple(users),
            markets=tuple(markets),
            user_prototypes=np.ones((len(users), dim)),
            market_prototypes=np.ones((len(markets), dim)),
            use_shared=False,
            use_market=False,
        )

    def user_matrix(self) -> np.ndarray:
        if not self.use_shared:
            return np.ones_like(self.user_prototypes)
        return self.user_prototypes

    def market_matrix(self) -> np.ndarray:
        if not self.use_market:
            return np.ones_like(self.market_prototypes)
        return self.market_prototypes

    def with_flags(self, use_shared: bool, use_market: bool) -> "PrototypeContext":
        return self.model_copy(update={"use_shared": use_shared, "use_market": use_market})


class HeadParameters(BaseModel):
    """
    Tensores treináveis de um head

    Nomes: P/Q (GMF ou MLP sozinhos), P_gmf/Q_gmf/P_mlp/Q_mlp (NMF),
    W1..WL e b1..bL (camadas do MLP), h (vetor de saída), market_table
    (variante MA com ramo GMF).
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: HeadKind
    dim: int
    mlp_layers: List[int] = Field(default_factory=list)
    users: Tuple[int, ...]
    items: Tuple[int, ...]
    markets: Tuple[str, ...]
    user_markets: np.ndarray = Field(..., description="Índice do mercado de cada usuário")
    tensors: Dict[str, np.ndarray] = Field(default_factory=dict)

    _user_index: Optional[Dict[int, int]] = PrivateAttr(default=None)
    _item_index: Optional[Dict[int, int]] = PrivateAttr(default=None)

    @property
    def n_mlp_layers(self) -> int:
        return max(0, len(self.mlp_layers) - 1)

    def user_rows(self, users) -> np.ndarray:
        """Linhas de P para os usuários (KeyError para ids desconhecidos)"""
        if self._user_index is None:
            self._user_index = {user: row for row, user in enumerate(self.users)}
        return np.array([self._user_index[int(u)] for u in np.atleast_1d(users)], dtype=np.int64)

    def item_rows(self, items) -> np.ndarray:
        if self._item_index is None:
            self._item_index = {item: row for row, item in enumerate(self.items)}
        return np.array([self._item_index[int(i)] for i in np.atleast_1d(items)], dtype=np.int64)


class TrainedHead(BaseModel):
    """Parâmetros finais e trajetória da perda"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    params: HeadParameters
    loss_trace: List[float] = Field(default_factory=list)
