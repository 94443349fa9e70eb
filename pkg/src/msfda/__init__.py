"""Multi-source source-free domain adaptation with selective pseudo-labeling."""

from .data import Dataset, generate_multi_source, pretrain_source
from .engine import AdaptationConfig, AdaptationResult, adapt, evaluate
from .models import SourceModel

__all__ = [
    "AdaptationConfig",
    "AdaptationResult",
    "Dataset",
    "SourceModel",
    "adapt",
    "evaluate",
    "generate_multi_source",
    "pretrain_source",
]

__version__ = "0.1.0"
