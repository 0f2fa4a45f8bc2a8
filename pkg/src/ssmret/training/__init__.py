from .bm25 import BM25, mine_negatives_bm25
from .data import (
    SyntheticDataset,
    TrainingExample,
    VocabProfile,
    generate_synthetic_dataset,
    make_training_examples,
)
from .loss import info_nce, info_nce_matrix
from .metrics import EvalResult, evaluate, mrr_at_k, ndcg_at_k, recall_at_k
from .trainer import Adam, TrainConfig, TrainResult, assemble_shared_negatives, train

__all__ = [
    "Adam",
    "BM25",
    "EvalResult",
    "SyntheticDataset",
    "TrainConfig",
    "TrainResult",
    "TrainingExample",
    "VocabProfile",
    "assemble_shared_negatives",
    "evaluate",
    "generate_synthetic_dataset",
    "info_nce",
    "info_nce_matrix",
    "make_training_examples",
    "mine_negatives_bm25",
    "mrr_at_k",
    "ndcg_at_k",
    "recall_at_k",
    "train",
]
