"""
Etapas do pipeline executadas pela CLI

Cada etapa lê os artefatos da etapa anterior (validando o manifesto), grava
os seus no diretório `<run_dir>/<etapa>/` e termina com um `manifest.json`.
"""
from pathlib import Path
from typing import Dict, List, Tuple

import pandas as pd
import structlog

from dgre.config import RunConfig
from dgre.core.exceptions import MissingArtifactError
from dgre.models.data import SplitDataset
from dgre.models.graph import EmbeddingTable, InteractionGraph
from dgre.models.heads import HeadKind, PrototypeContext
from dgre.models.results import StageName
from dgre.services.ablation import AblationBase, ablate_embeddings, ablate_k, best_k, plot_table
from dgre.services.artifacts import output_paths, require_manifest, stage_dir, write_manifest
from dgre.services.dataset import (
    filter_min_interactions,
    generate_synthetic,
    leave_one_out_split,
    load_interactions,
    read_split,
    write_interactions,
    write_split,
)
from dgre.services.evaluation import evaluate, metrics_frame, write_table
from dgre.services.graph_builder import build_item_graphs, build_user_graph, load_graph, write_graph
from dgre.services.market_prototyper import (
    build_all_market_prototypes,
    load_market_prototypes,
    write_market_prototypes,
)
from dgre.services.pipeline import GraphBundle, configured_kind, embed_graphs
from dgre.services.rec_heads import (
    HeadScorer,
    build_prototype_context,
    load_checkpoint,
    save_checkpoint,
    train_with_pretraining,
)
from dgre.services.embed_gnn import load_embeddings, write_embeddings
from dgre.services.user_prototyper import (
    load_assignments,
    load_user_prototypes,
    prototype_users,
    write_assignments,
    write_user_prototypes,
)
from dgre.workers.executor import StageExecutor

logger = structlog.get_logger(__name__)

SYNTH_FILE = "interactions.tsv"
RESULTS_FILE = "results.tsv"


def _item_dir(market: str) -> str:
    return f"item_{market}"


# Leitura dos artefatos de etapas anteriores

def _read_ingest(run_dir: Path) -> Tuple[SplitDataset, List[Path]]:
    manifest = require_manifest(run_dir, StageName.INGEST)
    return read_split(stage_dir(run_dir, StageName.INGEST)), output_paths(run_dir, StageName.INGEST, manifest)


def _read_graphs(run_dir: Path, split: SplitDataset) -> Tuple[GraphBundle, List[Path]]:
    manifest = require_manifest(run_dir, StageName.GRAPHS)
    directory = stage_dir(run_dir, StageName.GRAPHS)
    user_graph = load_graph(directory / "user", kind="user")
    item_graphs = {
        market: load_graph(directory / _item_dir(market), kind="item", market=market)
        for market in split.train.markets
    }
    return GraphBundle(user_graph=user_graph, item_graphs=item_graphs), output_paths(run_dir, StageName.GRAPHS, manifest)


def _read_embeddings(
    run_dir: Path, split: SplitDataset
) -> Tuple[Tuple[EmbeddingTable, Dict[str, EmbeddingTable]], List[Path]]:
    manifest = require_manifest(run_dir, StageName.EMBED)
    directory = stage_dir(run_dir, StageName.EMBED)
    user_table = load_embeddings(directory / "user.tsv")
    item_tables = {market: load_embeddings(directory / f"{_item_dir(market)}.tsv") for market in split.train.markets}
    return (user_table, item_tables), output_paths(run_dir, StageName.EMBED, manifest)


def _read_context(run_dir: Path, split: SplitDataset, config: RunConfig) -> Tuple[PrototypeContext, List[Path]]:
    manifest = require_manifest(run_dir, StageName.PROTOTYPES)
    directory = stage_dir(run_dir, StageName.PROTOTYPES)
    context = build_prototype_context(
        split.train.all_users,
        split.train.markets,
        config.head.dim,
        user_prototypes=load_user_prototypes(directory / "user_prototypes.tsv", alpha=config.proto.alpha),
        assignment=load_assignments(directory / "assignments.tsv"),
        market_prototypes=load_market_prototypes(directory),
        soft_mixture=config.proto.soft_mixture,
        use_shared=config.head.use_shared,
        use_market=config.head.use_market,
    )
    return context, output_paths(run_dir, StageName.PROTOTYPES, manifest)


def _context_for(kind: HeadKind, run_dir: Path, split: SplitDataset, config: RunConfig):
    """Contexto de protótipos só para a variante dgre; as demais não leem a etapa de protótipos"""
    if kind.uses_prototypes:
        return _read_context(run_dir, split, config)
    return PrototypeContext.disabled(split.train.all_users, split.train.markets, config.head.dim), []


# Etapas

def cmd_synth(config: RunConfig, executor: StageExecutor) -> List[str]:
    """Gera o dataset sintético e grava `synth/interactions.tsv`"""
    directory = stage_dir(config.run_dir, StageName.SYNTH)
    directory.mkdir(parents=True, exist_ok=True)
    dataset = generate_synthetic(config.data.synth, config.seed)
    write_interactions(dataset, str(directory / SYNTH_FILE))
    write_manifest(
        directory,
        StageName.SYNTH,
        config.seed,
        outputs=[SYNTH_FILE],
        notes={"markets": ",".join(dataset.markets), "interactions": str(len(dataset))},
    )
    return [SYNTH_FILE]


def cmd_ingest(config: RunConfig, executor: StageExecutor) -> List[str]:
    """Lê as interações, filtra usuários e itens raros e faz o split leave-one-out"""
    run_dir = config.run_dir
    data = config.data
    if data.source == "synth":
        manifest = require_manifest(run_dir, StageName.SYNTH)
        inputs = output_paths(run_dir, StageName.SYNTH, manifest)
        dataset = load_interactions(str(stage_dir(run_dir, StageName.SYNTH) / SYNTH_FILE), fmt="tsv")
    else:
        source = Path(data.path)
        inputs = [source] if source.is_file() else sorted(source.glob("*.tsv"))
        dataset = load_interactions(data.path, fmt=data.source, markets=data.markets)

    filtered = filter_min_interactions(dataset, data.min_interactions)
    split = leave_one_out_split(filtered, config.seed)
    directory = stage_dir(run_dir, StageName.INGEST)
    outputs = write_split(split, directory)
    write_manifest(
        directory,
        StageName.INGEST,
        config.seed,
        inputs=inputs,
        outputs=outputs,
        notes={"test_users": str(len(split.test)), "interactions": str(len(split.train))},
    )
    return outputs


def cmd_graphs(config: RunConfig, executor: StageExecutor) -> List[str]:
    """Grafo global de usuários e um grafo de itens por mercado"""
    run_dir = config.run_dir
    split, inputs = _read_ingest(run_dir)
    user_graph = build_user_graph(split.train, config.graph.min_common_items)
    item_graphs = build_item_graphs(split.train, config.graph.min_common_users, executor)

    directory = stage_dir(run_dir, StageName.GRAPHS)
    outputs = [f"user/{name}" for name in write_graph(user_graph, directory / "user")]
    for market, graph in item_graphs.items():
        outputs += [f"{_item_dir(market)}/{name}" for name in write_graph(graph, directory / _item_dir(market))]
    write_manifest(directory, StageName.GRAPHS, config.seed, inputs=inputs, outputs=outputs)
    return outputs


def cmd_embed(config: RunConfig, executor: StageExecutor) -> List[str]:
    """Embeddings não supervisionados de cada grafo"""
    run_dir = config.run_dir
    split, split_inputs = _read_ingest(run_dir)
    graphs, graph_inputs = _read_graphs(run_dir, split)
    embeddings = embed_graphs(graphs, config, executor)

    directory = stage_dir(run_dir, StageName.EMBED)
    directory.mkdir(parents=True, exist_ok=True)
    write_embeddings(embeddings.user.table, directory / "user.tsv")
    outputs = ["user.tsv"]
    degenerate = [graph for graph, fit in [("user", embeddings.user)] + list(embeddings.items.items()) if fit.degenerate]
    for market, fit in embeddings.items.items():
        name = f"{_item_dir(market)}.tsv"
        write_embeddings(fit.table, directory / name)
        outputs.append(name)
    write_manifest(
        directory,
        StageName.EMBED,
        config.seed,
        inputs=split_inputs + graph_inputs,
        outputs=outputs,
        notes={"degenerate": ",".join(degenerate)} if degenerate else None,
    )
    return outputs


def cmd_prototypes(config: RunConfig, executor: StageExecutor) -> List[str]:
    """Protótipos compartilhados de usuários e protótipos específicos de cada mercado"""
    run_dir = config.run_dir
    proto = config.proto
    split, split_inputs = _read_ingest(run_dir)
    graphs, graph_inputs = _read_graphs(run_dir, split)
    (user_table, item_tables), embed_inputs = _read_embeddings(run_dir, split)

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

    directory = stage_dir(run_dir, StageName.PROTOTYPES)
    directory.mkdir(parents=True, exist_ok=True)
    write_user_prototypes(users.prototypes, directory / "user_prototypes.tsv")
    write_assignments(users.assignment, directory / "assignments.tsv")
    communities = sorted(users.partition.assignment.items())
    pd.DataFrame(communities, columns=["user_id", "community"]).to_csv(
        directory / "communities.tsv", sep="\t", index=False, header=False
    )
    outputs = ["user_prototypes.tsv", "assignments.tsv", "communities.tsv"]
    outputs += write_market_prototypes(markets, directory)

    write_manifest(
        directory,
        StageName.PROTOTYPES,
        config.seed,
        inputs=split_inputs + graph_inputs + embed_inputs,
        outputs=outputs,
        notes={f"failed_{market}": message for market, message in failures.items()},
    )
    return outputs


def cmd_train(config: RunConfig, executor: StageExecutor) -> List[str]:
    """Treina o head configurado (e os ramos pré-treinados no caso do NMF)"""
    run_dir = config.run_dir
    kind = configured_kind(config)
    split, split_inputs = _read_ingest(run_dir)
    graph_init, embed_inputs = _read_embeddings(run_dir, split)
    context, proto_inputs = _context_for(kind, run_dir, split, config)

    head, branches = train_with_pretraining(kind, split, context, config.head, config.seed, graph_init=graph_init)

    directory = stage_dir(run_dir, StageName.TRAIN)
    outputs = [f"{kind.tag}/{name}" for name in save_checkpoint(head, directory / kind.tag)]
    for family, branch in branches.items():
        branch_dir = f"{kind.tag}/branch_{family}"
        outputs += [f"{branch_dir}/{name}" for name in save_checkpoint(branch, directory / branch_dir, notes="pretrained")]
    write_manifest(
        directory,
        StageName.TRAIN,
        config.seed,
        inputs=split_inputs + embed_inputs + proto_inputs,
        outputs=outputs,
        notes={"kind": kind.tag},
    )
    return outputs


def cmd_eval(config: RunConfig, executor: StageExecutor) -> List[str]:
    """Avalia o head treinado e grava `eval/results.tsv`"""
    run_dir = config.run_dir
    kind = configured_kind(config)
    require_manifest(run_dir, StageName.TRAIN)
    checkpoint_dir = stage_dir(run_dir, StageName.TRAIN) / kind.tag
    if not (checkpoint_dir / "checkpoint.json").exists():
        raise MissingArtifactError(
            f"Missing upstream artifact: {checkpoint_dir / 'checkpoint.json'} (train the {kind.tag} head first)",
            path=str(checkpoint_dir / "checkpoint.json"),
        )
    split, split_inputs = _read_ingest(run_dir)
    context, proto_inputs = _context_for(kind, run_dir, split, config)
    head = load_checkpoint(checkpoint_dir)

    metrics = evaluate(
        HeadScorer(head.params, context),
        split,
        k=config.eval.k,
        n_neg=config.eval.n_neg,
        seed=config.seed,
        target_markets=config.eval.target_markets,
        executor=executor,
    )
    directory = stage_dir(run_dir, StageName.EVAL)
    directory.mkdir(parents=True, exist_ok=True)
    write_table(metrics_frame(metrics), directory / RESULTS_FILE)
    notes = {"kind": kind.tag}
    if metrics.omitted_markets:
        notes["omitted_markets"] = ",".join(metrics.omitted_markets)
    write_manifest(
        directory,
        StageName.EVAL,
        config.seed,
        inputs=split_inputs + proto_inputs + [checkpoint_dir / "checkpoint.json", checkpoint_dir / "tensors.npz"],
        outputs=[RESULTS_FILE],
        notes=notes,
    )
    return [RESULTS_FILE]


def cmd_ablate(config: RunConfig, executor: StageExecutor) -> List[str]:
    """Varredura de k e ablação dos protótipos sobre os grafos e embeddings já gravados"""
    run_dir = config.run_dir
    split, split_inputs = _read_ingest(run_dir)
    graphs, graph_inputs = _read_graphs(run_dir, split)
    graph_init, embed_inputs = _read_embeddings(run_dir, split)
    base = AblationBase(split=split, graphs=graphs, graph_init=graph_init)

    sweep = ablate_k(config, config.eval.k_values, config.eval.ablate_param, executor, base)
    embeddings = ablate_embeddings(config, executor, base)

    directory = stage_dir(run_dir, StageName.ABLATE)
    directory.mkdir(parents=True, exist_ok=True)
    write_table(sweep, directory / "k_sweep.tsv")
    write_table(plot_table(sweep), directory / "k_sweep_plot.tsv")
    write_table(embeddings, directory / "embeddings.tsv")
    best = best_k(sweep)
    write_manifest(
        directory,
        StageName.ABLATE,
        config.seed,
        inputs=split_inputs + graph_inputs + embed_inputs,
        outputs=["k_sweep.tsv", "k_sweep_plot.tsv", "embeddings.tsv"],
        notes={"param": config.eval.ablate_param, "best_k": str(best)},
    )
    return ["k_sweep.tsv", "k_sweep_plot.tsv", "embeddings.tsv"]


STAGES = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "graphs": cmd_graphs,
    "embed": cmd_embed,
    "prototypes": cmd_prototypes,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def cmd_all(config: RunConfig, executor: StageExecutor, ablate: bool = True) -> List[str]:
    """Encadeia todas as etapas (synth só quando `data.source = "synth"`)"""
    names = list(STAGES)
    if config.data.source != "synth":
        names.remove("synth")
    if not ablate:
        names.remove("ablate")
    outputs = []
    for name in names:
        logger.info("Stage started", stage=name)
        produced = STAGES[name](config, executor)
        outputs += [f"{name}/{output}" for output in produced]
        logger.info("Stage completed", stage=name, outputs=len(produced))
    return outputs
