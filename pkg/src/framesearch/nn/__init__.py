"""Minimal tensor, autodiff, layer and optimizer substrate."""

from .functional import (bce_loss, contrastive_loss, conv2d, crop2d, dense, downsample2, flatten,
                         kl_unit_normal, relu, row_distance, sigmoid, unflatten, upsample2)
from .layers import LayerSpec, Network, count_parameters
from .optim import OptimizerState, adadelta, adam, make_optimizer, optimizer_step
from .tensor import Tensor, concat, no_grad

__all__ = [
    "Tensor", "concat", "no_grad", "LayerSpec", "Network", "count_parameters", "OptimizerState", "adam",
    "adadelta", "make_optimizer", "optimizer_step", "conv2d", "dense", "relu", "sigmoid",
    "downsample2", "upsample2", "flatten", "unflatten", "crop2d", "row_distance", "bce_loss",
    "kl_unit_normal", "contrastive_loss",
]
