"""Dense retrieval with a selective state-space encoder."""

from .attention import AttentionEncoder, AttnConfig, encode_baseline, matched_attention_config
from .errors import (
    ContractError,
    DimensionError,
    DimMismatchError,
    EvaluationError,
    FormatError,
    IngestionError,
    LengthError,
    MagicError,
    SsmRetError,
    TrainingDivergedError,
    TruncatedFileError,
    VocabularyError,
)
from .index import EmbeddingIndex, ScoredHit, build_index, load_index, save_index, similarity, top_k
from .model import load_encoder, tokenize
from .ssm import EncoderConfig, SsmEncoder, encode, selective_scan

__version__ = "0.1.0"

__all__ = [
    "AttentionEncoder",
    "AttnConfig",
    "ContractError",
    "DimMismatchError",
    "DimensionError",
    "EmbeddingIndex",
    "EncoderConfig",
    "EvaluationError",
    "FormatError",
    "IngestionError",
    "LengthError",
    "MagicError",
    "ScoredHit",
    "SsmEncoder",
    "SsmRetError",
    "TrainingDivergedError",
    "TruncatedFileError",
    "VocabularyError",
    "build_index",
    "encode",
    "encode_baseline",
    "load_encoder",
    "load_index",
    "matched_attention_config",
    "save_index",
    "selective_scan",
    "similarity",
    "tokenize",
    "top_k",
]
