"""From-scratch CNN engine: layers, architectures, training."""

from .network import (
    ARCHITECTURES,
    LayerSpec,
    Network,
    build_architecture,
    load_model,
    predict,
    predict_batched,
    save_model,
)
from .train import Adam, TrainConfig, TrainingDiverged, train

__all__ = [
    "ARCHITECTURES",
    "Adam",
    "LayerSpec",
    "Network",
    "TrainConfig",
    "TrainingDiverged",
    "build_architecture",
    "load_model",
    "predict",
    "predict_batched",
    "save_model",
    "train",
]
