"""Knowledge-guided dynamic modality attention fusion for multimodal sentiment
regression, built on a minimal float64 reverse-mode autodiff core."""

from . import data, encoders, fusion, knowledge, metrics, objectives, pipeline, snapshot, tensor
from .pipeline import KudaModel, TrainConfig, desk_profile, paper_profile

__all__ = [
    "KudaModel",
    "TrainConfig",
    "desk_profile",
    "paper_profile",
    "data",
    "encoders",
    "fusion",
    "knowledge",
    "metrics",
    "objectives",
    "pipeline",
    "snapshot",
    "tensor",
]

__version__ = "0.1.0"
