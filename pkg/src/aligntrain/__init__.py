"""Contrastive image-text alignment at desk scale, with adaptive loss-weight
scheduling (fixed, variance, entropy, and cosine-spread strategies)."""

__version__ = "0.1.0"

from .data import FeatureDataset, NoiseSpec, generate_synthetic, load_features, save_features
from .encoder import DualEncoderParams, embed, init_params
from .evaluate import RetrievalReport, recall_at_k, relative_drop
from .loss import LossBreakdown, SimilarityMatrix, infonce_components, similarity_matrix
from .scheduler import BatchStatistics, LossWeights, SchedulerState, Strategy, batch_statistics
from .trainer import TrainConfig, TrainResult, load_checkpoint, save_checkpoint, train

__all__ = [
    "BatchStatistics",
    "DualEncoderParams",
    "FeatureDataset",
    "LossBreakdown",
    "LossWeights",
    "NoiseSpec",
    "RetrievalReport",
    "SchedulerState",
    "SimilarityMatrix",
    "Strategy",
    "TrainConfig",
    "TrainResult",
    "batch_statistics",
    "embed",
    "generate_synthetic",
    "infonce_components",
    "init_params",
    "load_checkpoint",
    "load_features",
    "recall_at_k",
    "relative_drop",
    "save_checkpoint",
    "save_features",
    "similarity_matrix",
    "train",
]
