"""Multi-level memory banks for unsupervised cross-domain embedding learning.

The package trains a small encoder against three cooperating non-parametric
memories over an unlabelled target set: an instance-level bank (one slot
per sample), two part-level banks (upper / bottom input halves) that
rectify neighbor weights, and a domain-level bank of cluster centroids that
guides neighbor selection through a reciprocal-neighborhood similarity
matrix. A synthetic benchmark plus retrieval metrics make the whole
mechanism reproducible at desk scale.
"""

__version__ = "0.1.0"

from .clustering import NOISE, PseudoLabeling, cluster
from .core_math import Hyperparams, cosine_score, l2_normalize, minmax_normalize, softmax
from .encoder import Encoder
from .evaluation import cluster_purity, evaluate_retrieval, neighbor_precision
from .losses import (
    LossReport,
    batch_hard_triplet,
    domain_loss,
    instance_loss,
    rectify_weights,
    source_loss,
    total_loss,
)
from .memory_bank import MemoryBank, MemoryLevel, rebuild_domain_bank
from .reciprocal import (
    NeighborSelection,
    SimilarityMatrix,
    build_similarity,
    raw_top_k_selection,
    reorder_and_select,
    soft_weights,
)
from .synth import SynthConfig, SynthDataset, generate, make_batches
from .trainer import VARIANTS, RunResult, run, run_ablation

__all__ = [
    "NOISE",
    "PseudoLabeling",
    "cluster",
    "Hyperparams",
    "cosine_score",
    "l2_normalize",
    "minmax_normalize",
    "softmax",
    "Encoder",
    "cluster_purity",
    "evaluate_retrieval",
    "neighbor_precision",
    "LossReport",
    "batch_hard_triplet",
    "domain_loss",
    "instance_loss",
    "rectify_weights",
    "source_loss",
    "total_loss",
    "MemoryBank",
    "MemoryLevel",
    "rebuild_domain_bank",
    "NeighborSelection",
    "SimilarityMatrix",
    "build_similarity",
    "raw_top_k_selection",
    "reorder_and_select",
    "soft_weights",
    "SynthConfig",
    "SynthDataset",
    "generate",
    "make_batches",
    "VARIANTS",
    "RunResult",
    "run",
    "run_ablation",
]
