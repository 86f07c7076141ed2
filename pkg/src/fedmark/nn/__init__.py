"""Minimal CNN engine: init, forward, cross-entropy backprop, SGD, evaluation."""

from fedmark.nn.arch import (
    Arch,
    Conv,
    Dense,
    Gradient,
    LENET_MINI,
    MaxPool,
    ModelParams,
    lenet_mini,
    param_count,
    split_params,
    validate_arch,
)
from fedmark.nn.engine import (
    cross_entropy,
    evaluate,
    forward,
    init_model,
    loss_and_grad,
    predict,
    softmax,
    train_batches,
    train_local,
)
from fedmark.nn.kernels import BACKEND

__all__ = [
    "Arch",
    "BACKEND",
    "Conv",
    "Dense",
    "Gradient",
    "LENET_MINI",
    "MaxPool",
    "ModelParams",
    "cross_entropy",
    "evaluate",
    "forward",
    "init_model",
    "lenet_mini",
    "loss_and_grad",
    "param_count",
    "predict",
    "softmax",
    "split_params",
    "train_batches",
    "train_local",
    "validate_arch",
]
