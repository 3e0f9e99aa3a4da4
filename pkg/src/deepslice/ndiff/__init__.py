"""Minimal reverse-mode autodiff: convolutions, pixel shuffle, L1, Adam."""

from .gradcheck import grad_check
from .ops import (
    add,
    concat_channels,
    conv2d,
    conv3d,
    l1_loss,
    linear_map_axis,
    relu,
    scale,
    subpixel_downsample_axis,
    subpixel_upsample_axis,
)
from .optim import ParamStore, adam_step, init_params
from .tensor import Tensor, as_tensor

__all__ = [
    "Tensor",
    "as_tensor",
    "ParamStore",
    "init_params",
    "adam_step",
    "grad_check",
    "conv2d",
    "conv3d",
    "subpixel_upsample_axis",
    "subpixel_downsample_axis",
    "linear_map_axis",
    "relu",
    "add",
    "scale",
    "concat_channels",
    "l1_loss",
]
