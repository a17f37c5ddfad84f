"""
Artefatos do diretório de execução: manifestos por etapa e configuração resolvida
"""
import hashlib
import json
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import structlog
from pydantic import ValidationError

from dgre import __version__
from dgre.config import RunConfig
from dgre.core.exceptions import MissingArtifactError
from dgre.models.results import StageManifest, StageName

logger = structlog.get_logger(__name__)

MANIFEST_NAME = "manifest.json"
RESOLVED_CONFIG_NAME = "config.resolved.toml"


def sha256_file(path: Path, chunk_size: int = 1 << 16) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


def stage_dir(run_dir: Path, stage: StageName) -> Path:
    return Path(run_dir) / stage.value


def write_manifest(
    directory: Path,
    stage: StageName,
    seed: int,
    inputs: Iterable[Path] = (),
    outputs: Iterable[str] = (),
    notes: Optional[Dict[str, str]] = None,
) -> StageManifest:
    """
    Grava `manifest.json` de uma etapa

    Args:
        directory: Diretório da etapa
        stage: Nome da etapa
        seed: Semente da execução
        inputs: Arquivos lidos (registrados com sha256, caminho relativo ao run dir)
        outputs: Arquivos gravados, relativos ao diretório da etapa
        notes: Informações extras (ex.: mercados que falharam)

    Returns:
        Manifesto gravado
    """
    directory.mkdir(parents=True, exist_ok=True)
    run_dir = directory.parent
    hashes = {}
    for path in sorted(Path(p) for p in inputs):
        try:
            key = str(path.relative_to(run_dir))
        except ValueError:
            key = str(path)
        hashes[key] = sha256_file(path)

    manifest = StageManifest(
        stage=stage,
        version=__version__,
        seed=seed,
        inputs=hashes,
        outputs=sorted(outputs),
        notes=notes or {},
    )
    (directory / MANIFEST_NAME).write_text(
        json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    logger.info("Stage manifest written", stage=stage.value, outputs=len(manifest.outputs))
    return manifest


def require_manifest(run_dir: Path, stage: StageName) -> StageManifest:
    """
    Lê e valida o manifesto de uma etapa anterior

    Todo arquivo listado em `outputs` precisa existir.

    Raises:
        MissingArtifactError: Manifesto ou saída ausente (caminho na mensagem)
    """
    directory = stage_dir(run_dir, stage)
    path = directory / MANIFEST_NAME
    if not path.exists():
        raise MissingArtifactError(
            f"Missing upstream artifact: {path} (run the '{stage.value}' stage first)",
            path=str(path),
        )
    try:
        manifest = StageManifest(**json.loads(path.read_text(encoding="utf-8")))
    except (ValueError, ValidationError) as e:
        raise MissingArtifactError(f"Unreadable stage manifest: {path} ({e})", path=str(path))

    for output in manifest.outputs:
        if not (directory / output).exists():
            missing = directory / output
            raise MissingArtifactError(f"Missing upstream artifact: {missing}", path=str(missing))
    return manifest


def output_paths(run_dir: Path, stage: StageName, manifest: StageManifest) -> List[Path]:
    directory = stage_dir(run_dir, stage)
    return [directory / output for output in manifest.outputs]


def write_resolved_config(config: RunConfig, run_dir: Path) -> Path:
    """Ecoa a configuração resolvida em `config.resolved.toml`"""
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / RESOLVED_CONFIG_NAME
    path.write_text(config.to_toml(), encoding="utf-8")
    return path
