"""
Orquestração em memória das etapas (usada pelos stages e pelas ablações)
"""
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import structlog

from dgre.config import RunConfig
from dgre.models.data import Dataset, SplitDataset
from dgre.models.graph import EmbeddingTable, InteractionGraph
from dgre.models.heads import HeadFamily, HeadKind, HeadVariant, PrototypeContext, TrainedHead
from dgre.models.prototypes import MarketPrototype
from dgre.models.results import RankingMetrics
from dgre.services.dataset import filter_min_interactions, generate_synthetic, leave_one_out_split, load_interactions
from dgre.services.embed_gnn import EmbeddingFit, train_unsupervised
from dgre.services.evaluation import evaluate
from dgre.services.graph_builder import build_item_graphs, build_user_graph
from dgre.services.market_prototyper import build_all_market_prototypes
from dgre.services.rec_heads import HeadScorer, build_prototype_context, train_with_pretraining
from dgre.services.user_prototyper import UserPrototypeFit, prototype_users

logger = structlog.get_logger(__name__)


@dataclass
class GraphBundle:
    user_graph: InteractionGraph
    item_graphs: Dict[str, InteractionGraph]


@dataclass
class EmbeddingBundle:
    user: EmbeddingFit
    items: Dict[str, EmbeddingFit]

    @property
    def graph_init(self) -> Tuple[EmbeddingTable, Dict[str, EmbeddingTable]]:
        return self.user.table, {market: fit.table for market, fit in self.items.items()}


@dataclass
class PrototypeBundle:
    users: UserPrototypeFit
    markets: Dict[str, MarketPrototype]
    failures: Dict[str, str] = field(default_factory=dict)


@dataclass
class PipelineResult:
    """Todos os objetos intermediários de uma execução"""
    dataset: Dataset
    split: SplitDataset
    graphs: GraphBundle
    embeddings: EmbeddingBundle
    prototypes: PrototypeBundle
    context: PrototypeContext
    head: TrainedHead
    branches: Dict[str, TrainedHead]
    metrics: RankingMetrics


def load_dataset(config: RunConfig) -> Dataset:
    """Gera ou lê as interações conforme `data.source`"""
    data = config.data
    if data.source == "synth":
        return generate_synthetic(data.synth, config.seed)
    return load_interactions(data.path, fmt=data.source, markets=data.markets)


def prepare_split(dataset: Dataset, config: RunConfig) -> SplitDataset:
    filtered = filter_min_interactions(dataset, config.data.min_interactions)
    return leave_one_out_split(filtered, config.seed)


def build_graphs(split: SplitDataset, config: RunConfig, executor=None) -> GraphBundle:
    user_graph = build_user_graph(split.train, config.graph.min_common_items)
    item_graphs = build_item_graphs(split.train, config.graph.min_common_users, executor)
    return GraphBundle(user_graph=user_graph, item_graphs=item_graphs)


def embed_graphs(graphs: GraphBundle, config: RunConfig, executor=None) -> EmbeddingBundle:
    """Embeddings do grafo de usuários e de cada grafo de itens (mesma semente em todos)"""
    embed = config.embed

    def fit(graph: InteractionGraph) -> EmbeddingFit:
        return train_unsupervised(
            graph,
            dim=embed.dim,
            n_layers=embed.n_layers,
            epochs=embed.epochs,
            lr=embed.lr,
            neg_per_pos=embed.neg_per_pos,
            seed=config.seed,
            sample_size=embed.sample_size,
            batch_size=embed.batch_size,
            optimizer=embed.optimizer,
        )

    user_fit = fit(graphs.user_graph)
    markets = list(graphs.item_graphs)
    item_fits = executor.map(lambda market: fit(graphs.item_graphs[market]), markets) if executor else [
        fit(graphs.item_graphs[market]) for market in markets
    ]
    return EmbeddingBundle(user=user_fit, items=dict(zip(markets, item_fits)))


def build_prototypes(
    split: SplitDataset,
    graphs: GraphBundle,
    user_table: EmbeddingTable,
    item_tables: Mapping[str, EmbeddingTable],
    config: RunConfig,
    executor=None,
) -> PrototypeBundle:
    proto = config.proto
    users = prototype_users(
        graphs.user_graph,
        user_table,
        proto.k_proto,
        alpha=proto.alpha,
        refine_steps=proto.refine_steps,
        refine_lr=proto.refine_lr,
        refresh_interval=proto.refresh_interval,
    )
    markets, failures = build_all_market_prototypes(
        split.train,
        item_tables,
        proto,
        seed=config.seed,
        graphs=graphs.item_graphs,
        executor=executor,
    )
    return PrototypeBundle(users=users, markets=markets, failures=failures)


def make_context(
    split: SplitDataset,
    prototypes: PrototypeBundle,
    config: RunConfig,
    use_shared: Optional[bool] = None,
    use_market: Optional[bool] = None,
) -> PrototypeContext:
    head = config.head
    return build_prototype_context(
        split.train.all_users,
        split.train.markets,
        head.dim,
        user_prototypes=prototypes.users.prototypes,
        assignment=prototypes.users.assignment,
        market_prototypes=prototypes.markets,
        soft_mixture=config.proto.soft_mixture,
        use_shared=head.use_shared if use_shared is None else use_shared,
        use_market=head.use_market if use_market is None else use_market,
    )


def configured_kind(config: RunConfig) -> HeadKind:
    return HeadKind(family=HeadFamily(config.head.kind), variant=HeadVariant(config.head.variant))


def train_and_evaluate(
    kind: HeadKind,
    split: SplitDataset,
    context: PrototypeContext,
    graph_init: Tuple[EmbeddingTable, Mapping[str, EmbeddingTable]],
    config: RunConfig,
    executor=None,
) -> Tuple[TrainedHead, Dict[str, TrainedHead], RankingMetrics]:
    head, branches = train_with_pretraining(
        kind,
        split,
        context,
        config.head,
        config.seed,
        graph_init=graph_init,
    )
    metrics = evaluate(
        HeadScorer(head.params, context),
        split,
        k=config.eval.k,
        n_neg=config.eval.n_neg,
        seed=config.seed,
        target_markets=config.eval.target_markets,
        executor=executor,
    )
    return head, branches, metrics


def run_pipeline(config: RunConfig, executor=None) -> PipelineResult:
    """Executa todas as etapas em memória para a configuração dada"""
    dataset = load_dataset(config)
    split = prepare_split(dataset, config)
    graphs = build_graphs(split, config, executor)
    embeddings = embed_graphs(graphs, config, executor)
    user_table, item_tables = embeddings.graph_init
    prototypes = build_prototypes(split, graphs, user_table, item_tables, config, executor)
    context = make_context(split, prototypes, config)
    kind = configured_kind(config)
    head, branches, metrics = train_and_evaluate(kind, split, context, embeddings.graph_init, config, executor)
    logger.info("Pipeline finished", kind=kind.tag, ndcg=metrics.overall.ndcg_at_k, hr=metrics.overall.hr_at_k)
    return PipelineResult(
        dataset=dataset,
        split=split,
        graphs=graphs,
        embeddings=embeddings,
        prototypes=prototypes,
        context=context,
        head=head,
        branches=branches,
        metrics=metrics,
    )
