"""Minimal reverse-mode autodiff: tensors, ops, optimizers, checkpoints."""

from .checkpoint import CheckpointError, dumps_params, load_params, loads_params, save_params
from .optim import SGD, Adam, sgd_step
from .tensor import (
    ShapeError,
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    clamp,
    concat,
    conv2d,
    exp,
    grad,
    leaky_relu,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    sigmoid,
    sub,
    sum,
    tanh,
)

__all__ = [
    "SGD", "Adam", "CheckpointError", "ShapeError", "Tape", "Tensor", "add", "as_tensor",
    "backward", "clamp", "concat", "conv2d", "dumps_params", "exp", "grad", "leaky_relu", "load_params",
    "loads_params", "log", "log_softmax", "matmul", "mean", "mul", "neg", "no_grad", "relu",
    "reshape", "save_params", "sgd_step", "sigmoid", "sub", "sum", "tanh",
]
