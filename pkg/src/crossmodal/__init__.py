"""Cross-modal embedding alignment for transductive zero-shot retrieval.

The package trains a pair of mapping stacks between an image-embedding
space and a word-vector space: a supervised triplet objective on seen
classes, an adversarial + cycle-consistency objective on unlabeled unseen
pools, and an alternating composition scheme that extends one stack per
step. Retrieval, ablation, grounding and synthetic benchmarks round out
the pipeline; the ``crossmodal`` CLI drives it end to end.
"""

from .embeddings import (
    ClassLabel,
    ClassProbe,
    ConseConfig,
    EmbeddingTable,
    conse_embed,
    embed_label,
    embed_sentence,
    rho_vis,
)
from .estimator import CrossModalCycleGan
from .evaluation import EvalReport, RankingResult, ablate, evaluate, flat_hit, mfr, rank_queries
from .nets import MappingStack, Mlp2, apply_stack
from .numerics import SeededRng, cosine, pca_project, pearson, spearman
from .trainer import TrainConfig, train_full, train_unsupervised

__version__ = "0.1.0"

__all__ = [
    "ClassLabel",
    "ClassProbe",
    "ConseConfig",
    "CrossModalCycleGan",
    "EmbeddingTable",
    "EvalReport",
    "MappingStack",
    "Mlp2",
    "RankingResult",
    "SeededRng",
    "TrainConfig",
    "ablate",
    "apply_stack",
    "conse_embed",
    "cosine",
    "embed_label",
    "embed_sentence",
    "evaluate",
    "flat_hit",
    "mfr",
    "pca_project",
    "pearson",
    "rank_queries",
    "rho_vis",
    "spearman",
    "train_full",
    "train_unsupervised",
    "__version__",
]
