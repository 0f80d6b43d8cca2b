from .gradcheck import grad_check
from .optim import Adam, MissingGradError, clip_global_norm
from .params import ParameterSet
from .tensor import (
    AutogradError,
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    assert_finite,
    backward,
    concat,
    cosine,
    embedding,
    gelu,
    grad_enabled,
    layer_norm,
    log_softmax,
    matmul,
    mul,
    narrow,
    neg,
    nll,
    no_grad,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    softmax,
    tanh,
    transpose,
)

__all__ = [
    "Adam",
    "AutogradError",
    "MissingGradError",
    "NonFiniteError",
    "ParameterSet",
    "ShapeError",
    "Tensor",
    "add",
    "assert_finite",
    "backward",
    "clip_global_norm",
    "concat",
    "cosine",
    "embedding",
    "gelu",
    "grad_check",
    "grad_enabled",
    "layer_norm",
    "log_softmax",
    "matmul",
    "mul",
    "narrow",
    "neg",
    "nll",
    "no_grad",
    "reduce_mean",
    "reduce_sum",
    "relu",
    "reshape",
    "softmax",
    "tanh",
    "transpose",
]
