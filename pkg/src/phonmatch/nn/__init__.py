"""Minimal numpy autodiff: tensors, ops, Adam and tensor containers."""

from .container import ContainerError, read_container, write_container
from .ops import (
    MASK_VALUE,
    add,
    attention,
    attention_weights,
    batchnorm,
    bce,
    causal_mask,
    concat,
    conv1d,
    embedding,
    fc,
    gather_rows,
    gru,
    last_step,
    mul,
    relu,
    reshape,
    sigmoid,
    tconv1d,
    total,
)
from .optim import Adam, AdamState, adam_step
from .tensor import (
    NonFiniteError,
    Parameter,
    Tensor,
    default_dtype,
    get_default_dtype,
    no_grad,
    set_default_dtype,
)

__all__ = [
    "Adam", "AdamState", "ContainerError", "MASK_VALUE", "NonFiniteError", "Parameter", "Tensor",
    "adam_step", "add", "attention", "attention_weights", "batchnorm", "bce", "causal_mask",
    "concat", "conv1d", "default_dtype", "embedding", "fc", "gather_rows", "get_default_dtype",
    "gru", "last_step", "mul", "no_grad", "read_container", "relu", "reshape", "set_default_dtype",
    "sigmoid", "tconv1d", "total", "write_container",
]
