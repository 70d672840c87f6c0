"""Temporal relation extraction with Poincaré-ball event embeddings and a hyperbolic GRU."""

__version__ = "0.1.0"

from .data import DataError, EventPairExample, TempRelLabel, load_pairs, save_pairs
from .geometry import GeometryConfig
from .metrics import ConfusionMatrix, compute_metrics

__all__ = [
    "__version__", "ConfusionMatrix", "DataError", "EventPairExample", "GeometryConfig",
    "TempRelLabel", "compute_metrics", "load_pairs", "save_pairs",
]
