"""Unsupervised pixel-wise crack detection by adversarial image restoration."""

from .detector import DetectParams, RestoreStrategy, detect
from .evalkit import MetricsReport, compute_metrics, confusion_counts
from .losses import LossWeights
from .masks import MaskMode, build_mask_pool, corrupt, sample_mask
from .model import DiscriminatorSpec, GeneratorSpec, PatchDiscriminator, UNetGenerator
from .trainer import TrainConfig, fit

__version__ = "0.1.0"
