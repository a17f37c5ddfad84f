"""
Core module
"""
from dgre.core.exceptions import (
    DGREException,
    ConfigValidationError,
    MissingArtifactError,
    DataParseError,
    DataValidationError,
    UnknownMarketError,
    UnknownEntityError,
    SplitError,
    InsufficientCandidatesError,
    SynthesisError,
    ShapeMismatchError,
    GraphError,
    PrototypeSelectionError,
    ClusteringSupportError,
    DiscriminatorError,
    MissingPretrainedError,
    TrainingError,
    EvaluationError,
    CheckpointError,
)

__all__ = [
    "DGREException",
    "ConfigValidationError",
    "MissingArtifactError",
    "DataParseError",
    "DataValidationError",
    "UnknownMarketError",
    "UnknownEntityError",
    "SplitError",
    "InsufficientCandidatesError",
    "SynthesisError",
    "ShapeMismatchError",
    "GraphError",
    "PrototypeSelectionError",
    "ClusteringSupportError",
    "DiscriminatorError",
    "MissingPretrainedError",
    "TrainingError",
    "EvaluationError",
    "CheckpointError",
]
