"""HistNet: numpy autodiff engine, model, optimizer, training and checkpoints."""

from .checkpoint import load, save
from .model import (HistNetParams, LayerSpec, backward, forward, infer, init_params, layer_specs,
                    loss, stack_features, zero_params)
from .optimizer import ProximalAdagrad
from .train import TrainConfig, TrainResult, train

__all__ = [
    "HistNetParams", "LayerSpec", "ProximalAdagrad", "TrainConfig", "TrainResult", "backward",
    "forward", "infer", "init_params", "layer_specs", "load", "loss", "save", "stack_features",
    "train", "zero_params",
]
