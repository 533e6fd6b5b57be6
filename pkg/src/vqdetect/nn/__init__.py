"""Small numpy neural-network substrate: autodiff tensors, conv layers, losses, optimizers."""
from .tensor import (
    Parameter,
    Tensor,
    add,
    bce_with_logits,
    concat,
    conv2d,
    conv_transpose2d,
    log,
    matmul,
    mean,
    mse,
    mul,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    square,
    straight_through,
    tsum,
)
from .layers import Conv2d, ConvTranspose2d, Linear, Module, ReLU, ResBlock, Sequential
from .losses import kl_diag_gaussian, vae_total_loss
from .optim import SGD, Adam, OptimConfig, make_optimizer, optimizer_step
from .checkpoint import ArchitectureMismatch, CheckpointError, load_arrays, load_module, save_arrays, save_module

__all__ = [
    "Tensor", "Parameter", "add", "mul", "square", "log", "relu", "sigmoid", "tsum", "mean",
    "reshape", "matmul", "concat", "conv2d", "conv_transpose2d", "straight_through", "mse",
    "bce_with_logits", "set_default_dtype",
    "Module", "Conv2d", "ConvTranspose2d", "Linear", "ReLU", "ResBlock", "Sequential",
    "kl_diag_gaussian", "vae_total_loss",
    "SGD", "Adam", "OptimConfig", "make_optimizer", "optimizer_step",
    "save_arrays", "load_arrays", "save_module", "load_module", "CheckpointError", "ArchitectureMismatch",
]
