"""Modality-gap toolkit: contrastive losses, gap metrics and desk-scale experiments on the unit sphere."""

from contrastive_gap.embedding_space import EmbeddingSet, PairedEmbeddings
from contrastive_gap.losses import LossConfig, composite_gradient, composite_loss
from contrastive_gap.metrics import GapReport, gap_report

__all__ = ["EmbeddingSet", "PairedEmbeddings", "LossConfig", "composite_loss",
           "composite_gradient", "GapReport", "gap_report"]
__version__ = "0.1.0"
