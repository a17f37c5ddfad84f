"""
Ablações: varredura de k (protótipos de usuário ou itens por mercado) e
liga/desliga de cada tipo de protótipo com o GMF como backbone
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
import structlog

from dgre.config import RunConfig
from dgre.core.exceptions import ConfigValidationError
from dgre.models.data import SplitDataset
from dgre.models.graph import EmbeddingTable
from dgre.models.heads import HeadFamily, HeadKind, HeadVariant
from dgre.models.results import RankingMetrics
from dgre.services.evaluation import OVERALL
from dgre.services.pipeline import (
    GraphBundle,
    build_graphs,
    build_prototypes,
    embed_graphs,
    load_dataset,
    make_context,
    prepare_split,
    train_and_evaluate,
)

logger = structlog.get_logger(__name__)

K_COLUMNS = ["market", "param", "k_value", "k_cutoff", "hr", "ndcg", "recall", "n_users"]
EMBEDDING_COLUMNS = ["market", "setting", "k_cutoff", "hr", "ndcg", "recall", "n_users"]

EMBEDDING_SETTINGS = (
    ("base", None, None),
    ("shared", True, False),
    ("market", False, True),
    ("full", True, True),
)


@dataclass
class AblationBase:
    """Etapas comuns a todas as execuções de uma ablação"""
    split: SplitDataset
    graphs: GraphBundle
    graph_init: Tuple[EmbeddingTable, Dict[str, EmbeddingTable]]


def prepare_base(config: RunConfig, executor=None) -> AblationBase:
    split = prepare_split(load_dataset(config), config)
    graphs = build_graphs(split, config, executor)
    embeddings = embed_graphs(graphs, config, executor)
    return AblationBase(split=split, graphs=graphs, graph_init=embeddings.graph_init)


def _metric_rows(metrics: RankingMetrics) -> List[tuple]:
    entries = list(metrics.per_market.items()) + [(OVERALL, metrics.overall)]
    # um único item relevante: recall@K coincide com HR@K
    return [
        (market, metrics.k, values.hr_at_k, values.ndcg_at_k, values.hr_at_k, values.n_users)
        for market, values in entries
    ]


def ablate_k(
    config: RunConfig,
    k_values: Sequence[int],
    param: str = "k_proto",
    executor=None,
    base: Optional[AblationBase] = None,
) -> pd.DataFrame:
    """
    Refaz protótipos e head dgre para cada valor de `param` (k_proto ou k_s)

    Returns:
        Tabela longa com uma linha por (mercado, k)
    """
    if param not in ("k_proto", "k_s"):
        raise ConfigValidationError(f"Unknown ablation parameter '{param}'", field="eval.ablate_param")
    base = base or prepare_base(config, executor)
    user_table, item_tables = base.graph_init
    kind = HeadKind(family=HeadFamily(config.head.kind), variant=HeadVariant.DGRE)

    rows = []
    for k in k_values:
        run_config = config.model_copy(update={"proto": config.proto.model_copy(update={param: int(k)})})
        prototypes = build_prototypes(base.split, base.graphs, user_table, item_tables, run_config, executor)
        context = make_context(base.split, prototypes, run_config)
        _, _, metrics = train_and_evaluate(kind, base.split, context, base.graph_init, run_config, executor)
        for row in _metric_rows(metrics):
            rows.append((row[0], param, int(k)) + row[1:])
        logger.info("Ablation run finished", param=param, k=k, ndcg=metrics.overall.ndcg_at_k)

    table = pd.DataFrame(rows, columns=K_COLUMNS)
    best = best_k(table)
    if best is not None:
        logger.info("Best k by pooled nDCG", param=param, k=best)
    return table


def best_k(table: pd.DataFrame) -> Optional[int]:
    """Valor de k com maior nDCG agregado (empate: menor k)"""
    pooled = table[table["market"] == OVERALL].sort_values(["ndcg", "k_value"], ascending=[False, True])
    if pooled.empty:
        return None
    return int(pooled["k_value"].iloc[0])


def plot_table(table: pd.DataFrame, metric: str = "ndcg") -> pd.DataFrame:
    """Tabela larga mercado x k para gráficos"""
    wide = table.pivot_table(index="k_value", columns="market", values=metric, aggfunc="first")
    return wide.reset_index()


def ablate_embeddings(
    config: RunConfig,
    executor=None,
    base: Optional[AblationBase] = None,
) -> pd.DataFrame:
    """
    Quatro execuções do GMF: base, só protótipos compartilhados, só protótipos
    de mercado e ambos
    """
    base = base or prepare_base(config, executor)
    user_table, item_tables = base.graph_init
    prototypes = build_prototypes(base.split, base.graphs, user_table, item_tables, config, executor)

    rows = []
    for setting, use_shared, use_market in EMBEDDING_SETTINGS:
        variant = HeadVariant.BASE if use_shared is None else HeadVariant.DGRE
        kind = HeadKind(family=HeadFamily.GMF, variant=variant)
        context = make_context(base.split, prototypes, config, use_shared=use_shared, use_market=use_market)
        _, _, metrics = train_and_evaluate(kind, base.split, context, base.graph_init, config, executor)
        for row in _metric_rows(metrics):
            rows.append((row[0], setting) + row[1:])
        logger.info("Embedding ablation run finished", setting=setting, ndcg=metrics.overall.ndcg_at_k)
    return pd.DataFrame(rows, columns=EMBEDDING_COLUMNS)
