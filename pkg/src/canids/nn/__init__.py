"""Minimal dense-tensor NN engine: exactly the layers the detector needs.

Tensors are contiguous numpy arrays in NHWC layout; training runs in float32.
"""

from .layers import (
    conv2d_backward,
    conv2d_forward,
    maxpool2x2_backward,
    maxpool2x2_forward,
    relu,
    sigmoid,
    tconv2d_backward,
    tconv2d_forward,
)
from .model import (
    Activation,
    CaeModel,
    LayerKind,
    LayerSpec,
    REFERENCE_PARAM_COUNT,
    build_cae,
    cae_topology,
    count_params,
    mse_loss,
)
from .storage import load_model, save_model
from .training import AdamState, TrainConfig, adam_step, train, write_loss_log

__all__ = [
    "Activation",
    "AdamState",
    "CaeModel",
    "LayerKind",
    "LayerSpec",
    "TrainConfig",
    "adam_step",
    "build_cae",
    "cae_topology",
    "conv2d_backward",
    "conv2d_forward",
    "REFERENCE_PARAM_COUNT",
    "count_params",
    "load_model",
    "maxpool2x2_backward",
    "maxpool2x2_forward",
    "mse_loss",
    "relu",
    "save_model",
    "sigmoid",
    "tconv2d_backward",
    "tconv2d_forward",
    "train",
    "write_loss_log",
]
