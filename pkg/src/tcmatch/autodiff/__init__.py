"""Reverse-mode automatic differentiation over numpy arrays."""

from .optim import AdamW, AdamWState, adamw_step
from .serialization import load_parameters, save_parameters
from .tensor import (
    Tensor,
    add,
    as_tensor,
    concat,
    div,
    dot,
    dropout,
    embedding,
    exp,
    gelu,
    get_default_dtype,
    is_grad_enabled,
    layer_norm,
    log,
    log_softmax,
    masked_softmax,
    matmul,
    max_,
    maximum,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    set_default_dtype,
    softmax_cross_entropy,
    stack,
    sub,
    sum_,
    take,
    tanh,
    transpose,
)

__all__ = [
    "AdamW",
    "AdamWState",
    "Tensor",
    "adamw_step",
    "add",
    "as_tensor",
    "concat",
    "div",
    "dot",
    "dropout",
    "embedding",
    "exp",
    "gelu",
    "get_default_dtype",
    "is_grad_enabled",
    "layer_norm",
    "load_parameters",
    "log",
    "log_softmax",
    "masked_softmax",
    "matmul",
    "max_",
    "maximum",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "relu",
    "reshape",
    "save_parameters",
    "set_default_dtype",
    "softmax_cross_entropy",
    "stack",
    "sub",
    "sum_",
    "take",
    "tanh",
    "transpose",
]
