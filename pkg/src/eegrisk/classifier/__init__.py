"""Convolutional pre-ictal/inter-ictal image classifiers built on numpy."""
from .model_io import ModelFormatError, load_model, save_model
from .network import (
    CLASSES,
    LayerSpec,
    Network,
    NetworkSpec,
    backward,
    build_arch,
    forward,
    predict_proba,
)
from .training import History, TrainConfig, sgd_momentum_step, train

__all__ = [
    "CLASSES",
    "History",
    "LayerSpec",
    "ModelFormatError",
    "Network",
    "NetworkSpec",
    "TrainConfig",
    "backward",
    "build_arch",
    "forward",
    "load_model",
    "predict_proba",
    "save_model",
    "sgd_momentum_step",
    "train",
]
