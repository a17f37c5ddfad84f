"""
Serviço de dados: ingestão, filtragem, split leave-one-out, negativos e gerador sintético
"""
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd
import structlog

from dgre.config import SynthConfig
from dgre.core.exceptions import (
    DataParseError,
    DataValidationError,
    InsufficientCandidatesError,
    MissingArtifactError,
    SplitError,
    SynthesisError,
    UnknownMarketError,
)
from dgre.models.data import INTERACTION_COLUMNS, Dataset, HeldOutCase, SplitDataset, is_valid_market_code

logger = structlog.get_logger(__name__)

TSV_COLUMNS = ["market", "user", "item", "rating", "timestamp"]
PER_MARKET_COLUMNS = ["user", "item", "rating", "timestamp"]

SYNTH_MAX_TIMESTAMP = 1_000_000


def _read_tsv(path: Path, columns: List[str]) -> pd.DataFrame:
    """
    Lê um TSV de interações como strings, com cabeçalho opcional

    A coluna de timestamp pode faltar; nesse caso todas as linhas recebem 0.

    Returns:
        DataFrame com as colunas pedidas e a coluna `line` (número da linha no arquivo)

    Raises:
        DataParseError: Número de campos errado ou valor não numérico
    """
    try:
        raw = pd.read_csv(
            path,
            sep="\t",
            header=None,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=True,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=columns + ["line"])
    except pd.errors.ParserError as e:
        raise DataParseError(f"Could not parse {path}: {e}", details=str(e))
    except UnicodeDecodeError as e:
        raise DataParseError(f"{path} is not valid UTF-8", details=str(e))

    without_timestamp = raw.shape[1] == len(columns) - 1
    if raw.shape[1] != len(columns) and not without_timestamp:
        raise DataParseError(
            f"{path}: line 1 has {raw.shape[1]} fields, expected {len(columns)} (or {len(columns) - 1} without timestamp)",
            line=1,
        )
    raw.columns = columns[:-1] if without_timestamp else columns
    if without_timestamp:
        raw["timestamp"] = ""
    raw["line"] = np.arange(1, len(raw) + 1)

    user_column = raw["user"].str.strip()
    if len(raw) and pd.to_numeric(user_column.iloc[:1], errors="coerce").isna().iloc[0]:
        raw = raw.iloc[1:]

    parsed = raw.copy()
    for column in ("user", "item"):
        parsed[column] = pd.to_numeric(raw[column].str.strip(), errors="coerce")
    for column in ("rating", "timestamp"):
        values = raw[column].str.strip().replace("", "0")
        parsed[column] = pd.to_numeric(values, errors="coerce")

    numeric = ["user", "item", "rating", "timestamp"]
    bad = parsed[numeric].isna().any(axis=1)
    if not bad.any():
        integral = (parsed[["user", "item", "timestamp"]] % 1 == 0).all(axis=1)
        bad = ~integral
    if bad.any():
        line = int(parsed.loc[bad, "line"].iloc[0])
        raise DataParseError(f"{path}: malformed value on line {line}", line=line)

    if "market" in parsed.columns:
        parsed["market"] = parsed["market"].str.strip()
    return parsed


def _check_markets(frame: pd.DataFrame, allowed: Optional[Iterable[str]]) -> None:
    allowed_set = set(allowed) if allowed is not None else None
    for market, line in zip(frame["market"], frame["line"]):
        if not is_valid_market_code(market) or (allowed_set is not None and market not in allowed_set):
            raise UnknownMarketError(f"Unknown market code '{market}' on line {int(line)}")


def _deduplicate(frame: pd.DataFrame) -> pd.DataFrame:
    """Mantém a interação mais antiga de cada par (usuário, item)"""
    ordered = frame.sort_values(["user", "item", "timestamp"], kind="mergesort")
    return ordered.drop_duplicates(["user", "item"], keep="first")


def load_interactions(
    path: str,
    fmt: str = "tsv",
    markets: Optional[Iterable[str]] = None,
) -> Dataset:
    """
    Lê interações implícitas de um arquivo TSV ou de um diretório por mercado

    Args:
        path: Arquivo TSV (fmt="tsv") ou diretório com `<market>.tsv` (fmt="per_market")
        fmt: Formato declarado
        markets: Códigos aceitos (None aceita qualquer código válido)

    Returns:
        Dataset deduplicado; qualquer rating vira interação presente

    Raises:
        MissingArtifactError: Caminho inexistente
        DataParseError: Linha malformada
        UnknownMarketError: Código de mercado desconhecido
        DataValidationError: Usuário presente em mais de um mercado
    """
    source = Path(path)
    if not source.exists():
        raise MissingArtifactError(f"Interaction source not found: {path}", path=str(path))

    if fmt == "tsv":
        frame = _read_tsv(source, TSV_COLUMNS)
    elif fmt == "per_market":
        if not source.is_dir():
            raise DataParseError(f"{path} must be a directory of <market>.tsv files")
        parts = []
        for market_file in sorted(source.glob("*.tsv")):
            part = _read_tsv(market_file, PER_MARKET_COLUMNS)
            part["market"] = market_file.stem
            parts.append(part)
        frame = pd.concat(parts, ignore_index=True) if parts else pd.DataFrame(columns=TSV_COLUMNS + ["line"])
    else:
        raise DataParseError(f"Unknown interaction format '{fmt}'")

    if frame.empty:
        logger.warning("Interaction source is empty", path=str(path))
        return Dataset.empty()

    _check_markets(frame, markets)

    markets_per_user = frame.groupby("user")["market"].nunique()
    if (markets_per_user > 1).any():
        user = int(markets_per_user[markets_per_user > 1].index[0])
        raise DataValidationError(f"User {user} appears in more than one market")

    n_rows = len(frame)
    frame = _deduplicate(frame[INTERACTION_COLUMNS])
    market_order = list(dict.fromkeys(frame.sort_index()["market"].tolist()))
    dataset = Dataset.from_frame(frame, markets=market_order)

    logger.info(
        "Interactions loaded",
        path=str(path),
        format=fmt,
        rows=n_rows,
        interactions=len(dataset),
        markets=list(dataset.markets),
        users=len(dataset.all_users),
        items=len(dataset.items),
    )
    return dataset


def filter_min_interactions(ds: Dataset, min_count: int) -> Dataset:
    """
    Remove usuários e itens com menos de `min_count` interações até um ponto fixo

    Args:
        ds: Dataset de entrada
        min_count: Limiar (>= 1)

    Returns:
        Dataset em que todo usuário e todo item restante atinge o limiar
    """
    if min_count < 1:
        raise DataValidationError(f"min_count must be >= 1, got {min_count}")

    frame = ds.interactions
    rounds = 0
    while True:
        user_counts = frame["user"].map(frame["user"].value_counts())
        item_counts = frame["item"].map(frame["item"].value_counts())
        keep = (user_counts >= min_count) & (item_counts >= min_count)
        rounds += 1
        if keep.all():
            break
        frame = frame[keep]

    if len(frame) == len(ds):
        logger.debug("Dataset already satisfies threshold", min_count=min_count)
        return ds

    filtered = Dataset.from_frame(frame, markets=ds.markets)
    logger.info(
        "Dataset filtered",
        min_count=min_count,
        rounds=rounds,
        interactions_before=len(ds),
        interactions_after=len(filtered),
        users=len(filtered.all_users),
        items=len(filtered.items),
    )
    return filtered


def leave_one_out_split(ds: Dataset, seed: int = 0) -> SplitDataset:
    """
    Separa a interação mais recente de cada usuário para teste

    Empates de timestamp ficam com o maior item-id. O split é determinístico;
    `seed` só é registrado no log.

    Raises:
        SplitError: Usuário com uma única interação
    """
    frame = ds.interactions
    counts = frame["user"].value_counts()
    if (counts < 2).any():
        user = int(counts[counts < 2].sort_index().index[0])
        raise SplitError(f"User {user} has a single interaction; leave-one-out needs at least 2")

    ordered = frame.sort_values(["user", "timestamp", "item"], kind="mergesort")
    is_last = ~ordered.duplicated("user", keep="last")
    held_out = ordered[is_last]
    train_frame = ordered[~is_last]

    train = Dataset.from_frame(train_frame, markets=ds.markets, items=ds.items)
    test = [
        HeldOutCase(user=int(row.user), item=int(row.item), market=str(row.market))
        for row in held_out.itertuples(index=False)
    ]
    logger.info("Leave-one-out split", seed=seed, train=len(train), test=len(test))
    return SplitDataset(train=train, test=test)


def sample_negatives(
    train: Dataset,
    user: int,
    n: int,
    rng: np.random.Generator,
    exclude: Optional[Iterable[int]] = None,
) -> List[int]:
    """
    Amostra `n` itens distintos sem interação do usuário no treino

    Args:
        train: Dataset de treino (o vocabulário define os candidatos)
        user: Usuário
        n: Quantidade de negativos
        rng: Gerador semeado
        exclude: Itens adicionais proibidos (ex.: o item de teste)

    Raises:
        InsufficientCandidatesError: Menos de `n` candidatos
    """
    if n == 0:
        return []
    seen = train.user_items.get(int(user), np.zeros(0, dtype=np.int64))
    candidates = np.setdiff1d(np.asarray(train.items, dtype=np.int64), seen)
    if exclude is not None:
        candidates = np.setdiff1d(candidates, np.asarray(list(exclude), dtype=np.int64))
    if len(candidates) < n:
        raise InsufficientCandidatesError(
            f"User {user} has {len(candidates)} candidate negatives, {n} requested"
        )
    return [int(item) for item in rng.choice(candidates, size=n, replace=False)]


def _synthetic_draw(config: SynthConfig, seed: int) -> Tuple[pd.DataFrame, dict]:
    if config.p_in <= config.p_out:
        raise SynthesisError(
            f"p_in ({config.p_in}) must exceed p_out ({config.p_out}) for a recoverable structure"
        )

    rng = np.random.default_rng(seed)
    codes = config.resolved_market_codes()
    block = config.block_size
    upm = config.users_per_market
    frames = []
    groups = {}

    for market_index, market in enumerate(codes):
        user_groups = rng.integers(config.n_groups, size=upm)
        probs = np.full((upm, config.n_items), config.p_out)
        for row, group in enumerate(user_groups):
            probs[row, group * block:(group + 1) * block] = config.p_in
        if config.p_market > 0:
            preferred = market_index % config.n_groups
            tilt = probs[:, preferred * block:(preferred + 1) * block] + config.p_market
            probs[:, preferred * block:(preferred + 1) * block] = np.minimum(tilt, 1.0)

        hits = rng.random((upm, config.n_items)) < probs
        rows, items = np.nonzero(hits)
        users = market_index * upm + rows
        frames.append(pd.DataFrame({
            "market": market,
            "user": users.astype(np.int64),
            "item": items.astype(np.int64),
            "timestamp": rng.integers(0, SYNTH_MAX_TIMESTAMP, size=len(rows)),
        }))
        for row, group in enumerate(user_groups):
            groups[market_index * upm + row] = int(group)

    frame = pd.concat(frames, ignore_index=True)
    return frame, groups


def generate_synthetic(config: SynthConfig, seed: int) -> Dataset:
    """
    Gera interações com grupos de comportamento compartilhados entre mercados

    Cada usuário recebe um grupo latente g; o grupo j "possui" o bloco de itens
    [j·b, (j+1)·b). Cada par (usuário, item) é um Bernoulli com p_in dentro do
    bloco do grupo e p_out fora dele; com p_market > 0 o bloco preferido de
    cada mercado (índice do mercado mod g) recebe massa extra.

    Raises:
        SynthesisError: p_in <= p_out
    """
    frame, _ = _synthetic_draw(config, seed)
    dataset = Dataset.from_frame(
        frame,
        markets=config.resolved_market_codes(),
        items=range(config.n_items),
    )
    logger.info(
        "Synthetic dataset generated",
        seed=seed,
        markets=list(dataset.markets),
        interactions=len(dataset),
        groups=config.n_groups,
    )
    return dataset


def planted_groups(config: SynthConfig, seed: int) -> dict:
    """Grupo latente de cada usuário sintético (usuário -> grupo)"""
    _, groups = _synthetic_draw(config, seed)
    return groups


def write_interactions(ds: Dataset, path: str) -> None:
    """Grava o Dataset no formato TSV canônico (rating = 1)"""
    frame = ds.interactions.assign(rating=1)[TSV_COLUMNS]
    frame.to_csv(path, sep="\t", index=False, header=["market", "user_id", "item_id", "rating", "timestamp"])


def write_split(split: SplitDataset, directory: Path) -> List[str]:
    """Grava train.tsv, test.tsv e items.tsv do split"""
    directory.mkdir(parents=True, exist_ok=True)
    write_interactions(split.train, str(directory / "train.tsv"))
    pd.DataFrame(
        [(case.market, case.user, case.item) for case in split.test],
        columns=["market", "user_id", "item_id"],
    ).to_csv(directory / "test.tsv", sep="\t", index=False)
    pd.DataFrame({"item_id": list(split.train.items)}).to_csv(directory / "items.tsv", sep="\t", index=False)
    return ["train.tsv", "test.tsv", "items.tsv"]


def read_split(directory: Path) -> SplitDataset:
    """
    Lê um split gravado por `write_split`

    Raises:
        MissingArtifactError: Algum dos arquivos não existe
    """
    for name in ("train.tsv", "test.tsv", "items.tsv"):
        if not (directory / name).exists():
            raise MissingArtifactError(f"Split artifact not found: {directory / name}", path=str(directory / name))

    train_frame = pd.read_csv(directory / "train.tsv", sep="\t", dtype={"market": str}, keep_default_na=False)
    train_frame = train_frame.rename(columns={"user_id": "user", "item_id": "item"})
    items = pd.read_csv(directory / "items.tsv", sep="\t")["item_id"].astype(np.int64).tolist()
    test_frame = pd.read_csv(directory / "test.tsv", sep="\t", dtype={"market": str}, keep_default_na=False)

    market_order = list(dict.fromkeys(train_frame["market"].tolist() + test_frame["market"].tolist()))
    train = Dataset.from_frame(train_frame, markets=market_order, items=items)
    test = [
        HeldOutCase(user=int(row.user_id), item=int(row.item_id), market=str(row.market))
        for row in test_frame.itertuples(index=False)
    ]
    return SplitDataset(train=train, test=test)
