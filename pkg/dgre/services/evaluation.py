"""
Serviço de avaliação leave-one-out: ranking contra negativos amostrados, HR@K e nDCG@K
"""
import math
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog

from dgre.core.exceptions import EvaluationError
from dgre.models.data import HeldOutCase, SplitDataset
from dgre.models.results import MarketMetrics, RankingMetrics
from dgre.services.dataset import sample_negatives

logger = structlog.get_logger(__name__)

OVERALL = "all"
RESULT_COLUMNS = ["market", "metric", "k_cutoff", "value", "n_users"]

Scorer = Callable[[int, Sequence[int]], np.ndarray]


def rank_candidates(scorer: Scorer, user: int, held_out_item: int, negatives: Sequence[int]) -> int:
    """
    Posição (1-based) do item retido entre ele e os negativos

    Empates contam contra o item retido: rank = 1 + #{negativos com escore >= escore do retido}.

    Raises:
        EvaluationError: Candidatos duplicados
    """
    candidates = [int(held_out_item)] + [int(item) for item in negatives]
    if len(set(candidates)) != len(candidates):
        raise EvaluationError(f"Duplicate candidates for user {user}")
    scores = np.asarray(scorer(user, candidates), dtype=np.float64)
    return int(1 + np.sum(scores[1:] >= scores[0]))


def hr_at_k(rank: int, k: int) -> int:
    if rank < 1:
        raise EvaluationError(f"Rank must be >= 1, got {rank}")
    return int(rank <= k)


def ndcg_at_k(rank: int, k: int) -> float:
    """1/log2(rank + 1) dentro do corte, 0 fora"""
    if rank < 1:
        raise EvaluationError(f"Rank must be >= 1, got {rank}")
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def user_rng(seed: int, user: int) -> np.random.Generator:
    """Gerador de um usuário; não depende da ordem de avaliação"""
    return np.random.default_rng([int(seed), int(user)])


def _rank_case(scorer: Scorer, split: SplitDataset, case: HeldOutCase, n_neg: int, seed: int) -> int:
    negatives = sample_negatives(split.train, case.user, n_neg, user_rng(seed, case.user), exclude=[case.item])
    return rank_candidates(scorer, case.user, case.item, negatives)


def _aggregate(ranks: Iterable[int], k: int) -> MarketMetrics:
    ranks = list(ranks)
    if not ranks:
        return MarketMetrics(hr_at_k=0.0, ndcg_at_k=0.0, n_users=0)
    hr = math.fsum(hr_at_k(rank, k) for rank in ranks) / len(ranks)
    ndcg = math.fsum(ndcg_at_k(rank, k) for rank in ranks) / len(ranks)
    return MarketMetrics(hr_at_k=hr, ndcg_at_k=ndcg, n_users=len(ranks))


def evaluate(
    scorer: Scorer,
    split: SplitDataset,
    k: int = 10,
    n_neg: int = 99,
    seed: int = 0,
    target_markets: Optional[Sequence[str]] = None,
    executor=None,
) -> RankingMetrics:
    """
    HR@K e nDCG@K médios por mercado e agregados

    Cada usuário de teste é ranqueado contra `n_neg` negativos amostrados com
    um gerador derivado de (seed, usuário). Mercados sem usuários de teste são
    omitidos e listados em `omitted_markets`.

    Args:
        scorer: (usuário, itens) -> escores
        split: Split leave-one-out
        k: Corte
        n_neg: Negativos por usuário
        seed: Semente da amostragem
        target_markets: Mercados reportados (None ou vazio = todos)
        executor: StageExecutor opcional para paralelizar por usuário
    """
    markets = list(target_markets) if target_markets else list(split.train.markets)
    cases = sorted((case for case in split.test if case.market in markets), key=lambda case: case.user)

    run = lambda case: _rank_case(scorer, split, case, n_neg, seed)
    ranks = executor.map(run, cases) if executor is not None else [run(case) for case in cases]

    by_market: Dict[str, List[int]] = {market: [] for market in markets}
    for case, rank in zip(cases, ranks):
        by_market[case.market].append(rank)

    per_market = {}
    omitted = []
    for market in markets:
        if by_market[market]:
            per_market[market] = _aggregate(by_market[market], k)
        else:
            omitted.append(market)
            logger.warning("Market has no test users, omitted", market=market)

    metrics = RankingMetrics(
        k=k,
        per_market=per_market,
        overall=_aggregate(ranks, k),
        omitted_markets=omitted,
    )
    logger.info(
        "Evaluation finished",
        k=k,
        users=metrics.overall.n_users,
        hr=metrics.overall.hr_at_k,
        ndcg=metrics.overall.ndcg_at_k,
    )
    return metrics


def metrics_frame(metrics: RankingMetrics) -> pd.DataFrame:
    """Tabela no formato de resultados: market, metric, k_cutoff, value, n_users"""
    rows = []
    entries = list(metrics.per_market.items()) + [(OVERALL, metrics.overall)]
    for market, values in entries:
        rows.append((market, "hr", metrics.k, values.hr_at_k, values.n_users))
        rows.append((market, "ndcg", metrics.k, values.ndcg_at_k, values.n_users))
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def write_table(frame: pd.DataFrame, path: Path) -> None:
    """TSV com 9 dígitos significativos"""
    frame.to_csv(path, sep="\t", index=False, float_format="%.9g")
