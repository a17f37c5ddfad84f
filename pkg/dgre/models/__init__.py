"""
Modelos de domínio
"""
from dgre.models.data import Dataset, HeldOutCase, SplitDataset
from dgre.models.graph import EmbeddingTable, InteractionGraph, SageLayer, SageParameters
from dgre.models.heads import HeadFamily, HeadKind, HeadParameters, HeadVariant, PrototypeContext, TrainedHead
from dgre.models.prototypes import (
    CommunityPartition,
    Discriminator,
    MarketPrototype,
    SoftAssignment,
    UserPrototypeSet,
)
from dgre.models.results import (
    CheckpointManifest,
    ErrorCode,
    MarketMetrics,
    RankingMetrics,
    StageManifest,
    StageName,
)

__all__ = [
    "Dataset",
    "HeldOutCase",
    "SplitDataset",
    "EmbeddingTable",
    "InteractionGraph",
    "SageLayer",
    "SageParameters",
    "HeadFamily",
    "HeadKind",
    "HeadParameters",
    "HeadVariant",
    "PrototypeContext",
    "TrainedHead",
    "CommunityPartition",
    "Discriminator",
    "MarketPrototype",
    "SoftAssignment",
    "UserPrototypeSet",
    "CheckpointManifest",
    "ErrorCode",
    "MarketMetrics",
    "RankingMetrics",
    "StageManifest",
    "StageName",
]
