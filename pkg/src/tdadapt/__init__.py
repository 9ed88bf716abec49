"""Transductive domain adaptation.

Alternates between labeling an unlabeled target batch by graph-cut energy
minimization over a k-NN graph and learning an asymmetric bilinear
source/target similarity (plus optional feature parameters) with a
triplet hinge loss.
"""

from tdadapt.datamodel import (
    Checkpoint,
    SourceDataset,
    TargetDataset,
    load_checkpoint,
    load_csv,
    load_labels,
    load_rawmat,
    save_checkpoint,
    save_rawmat,
    synth_blobs,
)
from tdadapt.errors import (
    ConfigError,
    DataFormatError,
    DomainError,
    NumericalError,
    ShapeError,
    TdaError,
)
from tdadapt.features import FeatureFunction, init_params, param_grad_similarity
from tdadapt.graph import KnnGraph, build_knn
from tdadapt.metric import Triplet, cosine, grad_W, select_triplet, similarity, triplet_loss
from tdadapt.trainer import (
    AdaGradState,
    TrainConfig,
    TrainReport,
    adagrad_step,
    evaluate,
    train,
)
from tdadapt.transduction import (
    EnergyModel,
    LabelAssignment,
    alpha_beta_swap,
    build_energy_model,
    energy,
    nn_rule,
    transduce_batch,
)

__version__ = "0.1.0"

__all__ = [
    "AdaGradState",
    "Checkpoint",
    "ConfigError",
    "DataFormatError",
    "DomainError",
    "EnergyModel",
    "FeatureFunction",
    "KnnGraph",
    "LabelAssignment",
    "NumericalError",
    "ShapeError",
    "SourceDataset",
    "TargetDataset",
    "TdaError",
    "TrainConfig",
    "TrainReport",
    "Triplet",
    "adagrad_step",
    "alpha_beta_swap",
    "build_energy_model",
    "build_knn",
    "cosine",
    "energy",
    "evaluate",
    "grad_W",
    "init_params",
    "load_checkpoint",
    "load_csv",
    "load_labels",
    "load_rawmat",
    "nn_rule",
    "param_grad_similarity",
    "save_checkpoint",
    "save_rawmat",
    "select_triplet",
    "similarity",
    "synth_blobs",
    "train",
    "transduce_batch",
    "triplet_loss",
]
