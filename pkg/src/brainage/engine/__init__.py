"""Reverse-mode differentiation engine: layers, loss, optimizer, gradcheck."""

from .gradcheck import GradCheckReport, gradcheck
from .layers import (
    BatchNorm3d,
    Conv3d,
    Flatten,
    Layer,
    Linear,
    MaxPool3d,
    Parameter,
    ReLU,
    Sequential,
)
from .loss import mae_loss
from .optim import SGD

__all__ = [
    "BatchNorm3d",
    "Conv3d",
    "Flatten",
    "GradCheckReport",
    "Layer",
    "Linear",
    "MaxPool3d",
    "Parameter",
    "ReLU",
    "SGD",
    "Sequential",
    "gradcheck",
    "mae_loss",
]
