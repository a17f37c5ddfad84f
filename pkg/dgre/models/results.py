"""
Modelos de resultado: códigos de erro, métricas e manifestos
"""
from typing import Dict, List, Optional
from enum import Enum

from pydantic import BaseModel, Field, model_validator


class ErrorCode(str, Enum):
    """Códigos de erro"""
    CONFIG_INVALID = "CONFIG_INVALID"
    MISSING_ARTIFACT = "MISSING_ARTIFACT"
    DATA_PARSE_ERROR = "DATA_PARSE_ERROR"
    DATA_VALIDATION_ERROR = "DATA_VALIDATION_ERROR"
    UNKNOWN_MARKET = "UNKNOWN_MARKET"
    UNKNOWN_ENTITY = "UNKNOWN_ENTITY"
    SPLIT_PRECONDITION = "SPLIT_PRECONDITION"
    INSUFFICIENT_CANDIDATES = "INSUFFICIENT_CANDIDATES"
    SYNTHESIS_ERROR = "SYNTHESIS_ERROR"
    SHAPE_MISMATCH = "SHAPE_MISMATCH"
    GRAPH_ERROR = "GRAPH_ERROR"
    PROTOTYPE_SELECTION_ERROR = "PROTOTYPE_SELECTION_ERROR"
    CLUSTERING_SUPPORT_ERROR = "CLUSTERING_SUPPORT_ERROR"
    DISCRIMINATOR_ERROR = "DISCRIMINATOR_ERROR"
    MISSING_PRETRAINED = "MISSING_PRETRAINED"
    TRAINING_ERROR = "TRAINING_ERROR"
    EVALUATION_ERROR = "EVALUATION_ERROR"
    CHECKPOINT_ERROR = "CHECKPOINT_ERROR"
    INTERNAL_ERROR = "INTERNAL_ERROR"


class StageName(str, Enum):
    """Etapas do pipeline"""
    SYNTH = "synth"
    INGEST = "ingest"
    GRAPHS = "graphs"
    EMBED = "embed"
    PROTOTYPES = "prototypes"
    TRAIN = "train"
    EVAL = "eval"
    ABLATE = "ablate"


class MarketMetrics(BaseModel):
    """HR@K e nDCG@K agregados de um mercado (ou do conjunto)"""
    hr_at_k: float = Field(..., ge=0.0, le=1.0, description="Hit rate médio")
    ndcg_at_k: float = Field(..., ge=0.0, le=1.0, description="nDCG médio")
    n_users: int = Field(..., ge=0, description="Usuários avaliados")

    @model_validator(mode="after")
    def _ndcg_bounded_by_hr(self) -> "MarketMetrics":
        # um único item relevante: nDCG nunca passa do HR
        if self.ndcg_at_k > self.hr_at_k + 1e-12:
            raise ValueError("ndcg_at_k must not exceed hr_at_k")
        return self


class RankingMetrics(BaseModel):
    """Métricas de ranking por mercado e agregadas"""
    k: int = Field(..., ge=1, description="Corte do ranking")
    per_market: Dict[str, MarketMetrics] = Field(default_factory=dict)
    overall: MarketMetrics = Field(..., description="Métricas agregadas de todos os usuários")
    omitted_markets: List[str] = Field(
        default_factory=list,
        description="Mercados sem usuários de teste"
    )


class StageManifest(BaseModel):
    """Manifesto gravado por cada etapa no diretório da execução"""
    stage: StageName
    version: str
    seed: int
    inputs: Dict[str, str] = Field(default_factory=dict, description="Arquivo de entrada -> sha256")
    outputs: List[str] = Field(default_factory=list)
    notes: Dict[str, str] = Field(default_factory=dict)


class TensorEntry(BaseModel):
    """Descrição de um tensor dentro de um checkpoint"""
    name: str
    shape: List[int]


class CheckpointManifest(BaseModel):
    """Manifesto do checkpoint de um head"""
    magic: str = Field(default="DGRE1")
    kind: str
    dim: int
    mlp_layers: List[int] = Field(default_factory=list)
    tensors: List[TensorEntry] = Field(default_factory=list)
    users: List[int] = Field(default_factory=list)
    items: List[int] = Field(default_factory=list)
    markets: List[str] = Field(default_factory=list)
    user_markets: List[int] = Field(default_factory=list)
    loss_trace: List[float] = Field(default_factory=list)
    notes: Optional[str] = None
