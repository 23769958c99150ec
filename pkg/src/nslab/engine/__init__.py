"""Minimal deterministic deep-learning engine (float64, CPU, numpy).

Forward/backward passes for conv, transpose-conv, activation, and pooling
layers, MSE loss, Adam, and the autoencoder training loop.
"""

from nslab.engine.layers import (
    activation_apply,
    activation_grad,
    conv2d_forward,
    conv2d_input_grad,
    conv2d_kernel_grad,
    conv_output_hw,
    pool_backward,
    pool_forward,
    transpose_conv2d_forward,
    transpose_conv_output_hw,
)
from nslab.engine.network import (
    LayerSpec,
    Network,
    NetworkSpec,
    backward_and_grads,
    build_autoencoder,
    init_params,
    mse_loss,
)
from nslab.engine.optim import AdamState, adam_step
from nslab.engine.training import TrainConfig, train_autoencoder
from nslab.engine.checkpoint import Checkpoint, load_checkpoint, save_checkpoint

__all__ = [
    "AdamState",
    "Checkpoint",
    "LayerSpec",
    "Network",
    "NetworkSpec",
    "TrainConfig",
    "activation_apply",
    "activation_grad",
    "adam_step",
    "backward_and_grads",
    "build_autoencoder",
    "conv2d_forward",
    "conv2d_input_grad",
    "conv2d_kernel_grad",
    "conv_output_hw",
    "init_params",
    "load_checkpoint",
    "mse_loss",
    "pool_backward",
    "pool_forward",
    "save_checkpoint",
    "train_autoencoder",
    "transpose_conv2d_forward",
    "transpose_conv_output_hw",
]
