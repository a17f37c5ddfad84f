"""
Configurações do pipeline
"""
import sys
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict
import tomli_w

from dgre.core.exceptions import ConfigValidationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


MARKET_CODES = ("de", "jp", "fr", "uk", "ca", "mx", "in", "us", "es", "it")


class _Section(BaseModel):
    """Seção do arquivo TOML; chaves desconhecidas são erro"""
    model_config = ConfigDict(extra="forbid")


class SynthConfig(_Section):
    """Parâmetros do gerador sintético com grupos de comportamento plantados"""
    n_markets: int = Field(default=3, ge=1, description="Número de mercados t")
    users_per_market: int = Field(default=200, ge=1)
    n_items: int = Field(default=300, ge=1, description="Catálogo compartilhado m")
    n_groups: int = Field(default=4, ge=1, description="Grupos latentes g")
    items_per_group: Optional[int] = Field(
        default=None,
        ge=1,
        description="Itens por grupo (padrão: n_items // n_groups)"
    )
    p_in: float = Field(default=0.3, ge=0.0, le=1.0)
    p_out: float = Field(default=0.02, ge=0.0, le=1.0)
    p_market: float = Field(
        default=0.0,
        ge=0.0,
        le=1.0,
        description="Probabilidade extra no bloco preferido de cada mercado"
    )
    market_codes: Optional[List[str]] = Field(default=None)

    @model_validator(mode="after")
    def _check_blocks(self) -> "SynthConfig":
        if self.block_size * self.n_groups > self.n_items:
            raise ValueError("n_groups * items_per_group exceeds n_items")
        if self.market_codes is not None and len(self.market_codes) != self.n_markets:
            raise ValueError("market_codes must list exactly n_markets codes")
        return self

    @property
    def block_size(self) -> int:
        return self.items_per_group or max(1, self.n_items // self.n_groups)

    def resolved_market_codes(self) -> List[str]:
        if self.market_codes is not None:
            return list(self.market_codes)
        if self.n_markets <= len(MARKET_CODES):
            return list(MARKET_CODES[: self.n_markets])
        return [f"m{index}" for index in range(self.n_markets)]


class DataSettings(_Section):
    """Origem e filtragem dos dados"""
    source: Literal["synth", "tsv", "per_market"] = "synth"
    path: Optional[str] = Field(default=None, description="Arquivo TSV ou diretório com <market>.tsv")
    markets: Optional[List[str]] = Field(
        default=None,
        description="Mercados aceitos na ingestão (None aceita qualquer código válido)"
    )
    min_interactions: int = Field(default=5, ge=1)
    synth: SynthConfig = Field(default_factory=SynthConfig)

    @model_validator(mode="after")
    def _path_for_files(self) -> "DataSettings":
        if self.source != "synth" and not self.path:
            raise ValueError("data.path is required when data.source is not 'synth'")
        return self


class GraphSettings(_Section):
    """Limiares dos grafos de co-interação"""
    min_common_items: int = Field(default=2, ge=1, description="Grafo global de usuários")
    min_common_users: int = Field(default=2, ge=1, description="Grafos de itens por mercado")


class EmbedSettings(_Section):
    """Treino das camadas de agregação por média"""
    dim: int = Field(default=32, ge=1, description="d_graph")
    n_layers: int = Field(default=2, ge=0)
    sample_size: int = Field(default=10, ge=1)
    epochs: int = Field(default=20, ge=0)
    lr: float = Field(default=0.01, gt=0.0)
    neg_per_pos: int = Field(default=5, ge=0)
    batch_size: int = Field(default=512, ge=1)
    optimizer: Literal["adam", "sgd"] = "adam"


class ProtoSettings(_Section):
    """Protótipos compartilhados (usuários) e específicos (mercados)"""
    k_proto: int = Field(default=10, ge=1)
    k_s: int = Field(default=10, ge=1)
    alpha: float = Field(default=1.0, gt=0.0)
    refine_steps: int = Field(default=50, ge=0)
    refine_lr: float = Field(default=0.01, gt=0.0)
    refresh_interval: int = Field(default=10, ge=1)
    disc_epochs: int = Field(default=100, ge=0)
    disc_lr: float = Field(default=0.01, gt=0.0)
    disc_neg_per_pos: int = Field(default=1, ge=1)
    soft_mixture: bool = Field(
        default=False,
        description="Usa Σ_k W(u,k)·b_k em vez do protótipo de argmax"
    )


class HeadSettings(_Section):
    """Heads de recomendação"""
    kind: Literal["gmf", "mlp", "nmf"] = "gmf"
    variant: Literal["base", "dgre", "ma"] = "dgre"
    dim: int = Field(default=16, ge=1, description="d_head")
    mlp_layers: Optional[List[int]] = Field(
        default=None,
        description="Larguras do MLP a partir da entrada 2d (padrão: [2d, d, d/2])"
    )
    epochs: int = Field(default=20, ge=1)
    lr: float = Field(default=1e-3, gt=0.0)
    neg_per_pos: int = Field(default=4, ge=0)
    batch_size: int = Field(default=256, ge=1)
    init_std: float = Field(default=0.1, gt=0.0)
    use_shared: bool = True
    use_market: bool = True

    @field_validator("mlp_layers")
    @classmethod
    def _layers_nonempty(cls, v: Optional[List[int]]) -> Optional[List[int]]:
        if v is None:
            return v
        if len(v) < 2 or any(width < 1 for width in v):
            raise ValueError("mlp_layers needs at least an input and one output width, all >= 1")
        return v

    @model_validator(mode="after")
    def _mlp_input_width(self) -> "HeadSettings":
        if self.mlp_layers is not None and self.mlp_layers[0] != 2 * self.dim:
            raise ValueError("mlp_layers[0] must equal 2 * head.dim")
        return self

    @property
    def layer_widths(self) -> List[int]:
        if self.mlp_layers is not None:
            return list(self.mlp_layers)
        return [2 * self.dim, self.dim, max(1, self.dim // 2)]


class EvalSettings(_Section):
    """Protocolo leave-one-out"""
    k: int = Field(default=10, ge=1)
    n_neg: int = Field(default=99, ge=1)
    target_markets: List[str] = Field(
        default_factory=list,
        description="Mercados reportados (vazio = todos)"
    )
    k_values: List[int] = Field(default_factory=lambda: [2, 4, 8, 16])
    ablate_param: Literal["k_proto", "k_s"] = "k_proto"


class RunConfig(BaseSettings):
    """Configuração completa de uma execução"""

    data: DataSettings = Field(default_factory=DataSettings)
    graph: GraphSettings = Field(default_factory=GraphSettings)
    embed: EmbedSettings = Field(default_factory=EmbedSettings)
    proto: ProtoSettings = Field(default_factory=ProtoSettings)
    head: HeadSettings = Field(default_factory=HeadSettings)
    eval: EvalSettings = Field(default_factory=EvalSettings)

    seed: int = 42
    threads: int = Field(default=1, ge=1)
    out_dir: str = "runs/default"
    log_level: str = "INFO"

    model_config = SettingsConfigDict(
        env_prefix="DGRE_",
        env_nested_delimiter="__",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    @property
    def run_dir(self) -> Path:
        return Path(self.out_dir)

    def to_toml(self) -> str:
        """Serializa a configuração resolvida (valores None omitidos)"""
        return tomli_w.dumps(self.model_dump(mode="json", exclude_none=True))


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def parse_override(assignment: str) -> Dict[str, Any]:
    """
    Converte `section.key=value` em um dicionário aninhado

    O valor é interpretado como TOML (números, booleanos, listas); se não for
    TOML válido, vira string.
    """
    if "=" not in assignment:
        raise ConfigValidationError(
            f"Override '{assignment}' must look like section.key=value",
            field=assignment,
        )
    dotted, raw = assignment.split("=", 1)
    dotted = dotted.strip()
    try:
        value = tomllib.loads(f"value = {raw.strip()}")["value"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()

    nested: Dict[str, Any] = {}
    cursor = nested
    parts = dotted.split(".")
    for part in parts[:-1]:
        cursor = cursor.setdefault(part, {})
    cursor[parts[-1]] = value
    return nested


def load_config(
    path: Optional[str] = None,
    overrides: Optional[List[str]] = None,
    **flags: Any,
) -> RunConfig:
    """
    Resolve a configuração: flags > overrides > arquivo TOML > ambiente > padrões

    Args:
        path: Arquivo TOML opcional
        overrides: Lista de `section.key=value`
        flags: Campos de topo passados explicitamente (seed, out_dir, threads...)

    Returns:
        RunConfig validada

    Raises:
        ConfigValidationError: Arquivo ilegível ou campo inválido
    """
    values: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                values = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigValidationError(f"Config file not found: {path}", field="config")
        except tomllib.TOMLDecodeError as e:
            raise ConfigValidationError(f"Config file is not valid TOML: {e}", field="config")

    for assignment in overrides or []:
        values = _deep_merge(values, parse_override(assignment))

    values = _deep_merge(values, {key: value for key, value in flags.items() if value is not None})

    unknown = sorted(set(values) - set(RunConfig.model_fields))
    if unknown:
        raise ConfigValidationError(
            f"Invalid configuration field '{unknown[0]}': unknown key",
            field=unknown[0],
        )

    try:
        return RunConfig(**values)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or "config"
        raise ConfigValidationError(
            f"Invalid configuration field '{field}': {first['msg']}",
            field=field,
            details=str(e),
        )
