"""
Modelos de dados: interações multi-mercado e split leave-one-out
"""
import re
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

MARKET_CODE_PATTERN = re.compile(r"^[a-z][a-z0-9_-]{0,15}$")

INTERACTION_COLUMNS = ["market", "user", "item", "timestamp"]


def is_valid_market_code(code: str) -> bool:
    return bool(MARKET_CODE_PATTERN.match(code))


class Dataset(BaseModel):
    """
    Interações implícitas de vários mercados

    `interactions` é um DataFrame com colunas market, user, item, timestamp,
    ordenado por (user, item). `items` é o vocabulário global, que pode
    conter itens sem interação (ex.: itens retidos para teste).
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    markets: Tuple[str, ...] = Field(default=())
    items: Tuple[int, ...] = Field(default=())
    interactions: pd.DataFrame

    @model_validator(mode="after")
    def _check_invariants(self) -> "Dataset":
        frame = self.interactions
        missing = [column for column in INTERACTION_COLUMNS if column not in frame.columns]
        if missing:
            raise ValueError(f"interactions frame misses columns {missing}")
        if len(set(self.markets)) != len(self.markets):
            raise ValueError("market codes must be unique")
        if frame.empty:
            return self
        unknown_markets = set(frame["market"].unique()) - set(self.markets)
        if unknown_markets:
            raise ValueError(f"interactions reference unknown markets {sorted(unknown_markets)}")
        markets_per_user = frame.groupby("user")["market"].nunique()
        if (markets_per_user > 1).any():
            user = int(markets_per_user[markets_per_user > 1].index[0])
            raise ValueError(f"user {user} appears in more than one market")
        unknown_items = set(frame["item"].unique()) - set(self.items)
        if unknown_items:
            raise ValueError(f"interactions reference items outside the vocabulary: {sorted(unknown_items)[:5]}")
        return self

    @classmethod
    def from_frame(
        cls,
        frame: pd.DataFrame,
        markets: Optional[Iterable[str]] = None,
        items: Optional[Iterable[int]] = None,
    ) -> "Dataset":
        """
        Constrói um Dataset normalizando tipos e ordem

        Args:
            frame: Colunas market, user, item, timestamp
            markets: Ordem dos mercados (padrão: ordem de aparição)
            items: Vocabulário (padrão: itens presentes no frame)
        """
        frame = frame.loc[:, INTERACTION_COLUMNS].astype(
            {"market": str, "user": np.int64, "item": np.int64, "timestamp": np.int64}
        )
        frame = frame.sort_values(["user", "item"], kind="mergesort").reset_index(drop=True)
        if markets is None:
            markets = list(dict.fromkeys(frame["market"].tolist()))
        else:
            present = set(frame["market"].unique())
            markets = [market for market in markets if market in present]
        if items is None:
            items = np.unique(frame["item"].to_numpy()).tolist()
        return cls(
            markets=tuple(markets),
            items=tuple(sorted(int(item) for item in items)),
            interactions=frame,
        )

    @classmethod
    def empty(cls) -> "Dataset":
        return cls(interactions=pd.DataFrame({column: [] for column in INTERACTION_COLUMNS}))

    def __len__(self) -> int:
        return len(self.interactions)

    @cached_property
    def users(self) -> Dict[str, FrozenSet[int]]:
        """Conjunto U_l de usuários por mercado"""
        grouped = self.interactions.groupby("market")["user"].unique()
        return {
            market: frozenset(int(u) for u in grouped.get(market, []))
            for market in self.markets
        }

    @cached_property
    def all_users(self) -> Tuple[int, ...]:
        return tuple(sorted(int(u) for u in self.interactions["user"].unique()))

    @cached_property
    def user_market(self) -> Dict[int, str]:
        pairs = self.interactions.drop_duplicates("user")[["user", "market"]]
        return {int(u): str(m) for u, m in zip(pairs["user"], pairs["market"])}

    @cached_property
    def user_items(self) -> Dict[int, np.ndarray]:
        """Itens (ordenados) de cada usuário"""
        return {
            int(user): group.to_numpy(dtype=np.int64)
            for user, group in self.interactions.groupby("user")["item"]
        }

    def market_frame(self, market: str) -> pd.DataFrame:
        return self.interactions[self.interactions["market"] == market]


class HeldOutCase(BaseModel):
    """Item retido de um usuário"""
    model_config = ConfigDict(frozen=True)

    user: int
    item: int
    market: str


class SplitDataset(BaseModel):
    """Split leave-one-out: treino + um item retido por usuário"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    train: Dataset
    test: List[HeldOutCase] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_holdout(self) -> "SplitDataset":
        seen = set()
        user_items = self.train.user_items
        for case in self.test:
            if case.user in seen:
                raise ValueError(f"user {case.user} has more than one held-out item")
            seen.add(case.user)
            items = user_items.get(case.user)
            if items is not None and np.isin(case.item, items):
                raise ValueError(f"held-out item {case.item} of user {case.user} is also in train")
        return self
