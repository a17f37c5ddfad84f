"""
Exceções customizadas do pipeline
"""
from typing import Optional
from dgre.models.results import ErrorCode


class DGREException(Exception):
    """Exceção base do pipeline"""
    error_code: ErrorCode = ErrorCode.INTERNAL_ERROR
    exit_code: int = 3

    def __init__(self, message: str, details: Optional[str] = None):
        self.message = message
        self.details = details
        super().__init__(message)


# Erros de uso (exit 1 / 2)

class ConfigValidationError(DGREException):
    """Configuração inválida (campo nomeado na mensagem)"""
    error_code = ErrorCode.CONFIG_INVALID
    exit_code = 1

    def __init__(self, message: str, field: Optional[str] = None, details: Optional[str] = None):
        super().__init__(message, details)
        self.field = field


class MissingArtifactError(DGREException):
    """Artefato de uma etapa anterior não encontrado"""
    error_code = ErrorCode.MISSING_ARTIFACT
    exit_code = 2

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(message, details=path)
        self.path = path


# Erros de dados

class DataParseError(DGREException):
    """Arquivo de interações não pôde ser lido"""
    error_code = ErrorCode.DATA_PARSE_ERROR

    def __init__(self, message: str, line: Optional[int] = None, details: Optional[str] = None):
        super().__init__(message, details)
        self.line = line


class DataValidationError(DGREException):
    """Dataset viola um invariante (usuário em dois mercados, id desconhecido)"""
    error_code = ErrorCode.DATA_VALIDATION_ERROR


class UnknownMarketError(DGREException):
    """Código de mercado desconhecido"""
    error_code = ErrorCode.UNKNOWN_MARKET


class UnknownEntityError(DGREException):
    """Usuário, item ou nó desconhecido"""
    error_code = ErrorCode.UNKNOWN_ENTITY


class SplitError(DGREException):
    """Pré-condição do leave-one-out violada"""
    error_code = ErrorCode.SPLIT_PRECONDITION


class InsufficientCandidatesError(DGREException):
    """Não há itens suficientes para amostrar negativos"""
    error_code = ErrorCode.INSUFFICIENT_CANDIDATES


class SynthesisError(DGREException):
    """Parâmetros do gerador sintético inválidos"""
    error_code = ErrorCode.SYNTHESIS_ERROR


# Erros numéricos e de modelo

class ShapeMismatchError(DGREException):
    """Dimensões incompatíveis"""
    error_code = ErrorCode.SHAPE_MISMATCH


class GraphError(DGREException):
    """Grafo vazio ou degenerado"""
    error_code = ErrorCode.GRAPH_ERROR


class PrototypeSelectionError(DGREException):
    """Seleção de protótipos impossível (k maior que o número de nós)"""
    error_code = ErrorCode.PROTOTYPE_SELECTION_ERROR


class ClusteringSupportError(DGREException):
    """W(j,k) = 0 com alvo positivo na divergência KL"""
    error_code = ErrorCode.CLUSTERING_SUPPORT_ERROR


class DiscriminatorError(DGREException):
    """Discriminador não pode ser treinado no grafo"""
    error_code = ErrorCode.DISCRIMINATOR_ERROR


class MissingPretrainedError(DGREException):
    """NMF com protótipos sem ramos GMF/MLP pré-treinados"""
    error_code = ErrorCode.MISSING_PRETRAINED


class TrainingError(DGREException):
    """Conjunto de treino vazio ou treinamento inválido"""
    error_code = ErrorCode.TRAINING_ERROR


class EvaluationError(DGREException):
    """Candidatos duplicados ou posição inválida"""
    error_code = ErrorCode.EVALUATION_ERROR


class CheckpointError(DGREException):
    """Checkpoint corrompido ou de versão desconhecida"""
    error_code = ErrorCode.CHECKPOINT_ERROR
