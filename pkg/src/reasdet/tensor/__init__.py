"""Minimal dense-tensor core: NCHW storage, conv family, activations,
pooling, reverse-mode gradients, and a finite-difference verifier."""

from .core import (
    NonFiniteError,
    ShapeError,
    Tensor,
    TensorError,
    activation,
    add,
    as_tensor,
    batchnorm_infer,
    concat,
    default_dtype,
    exp,
    get_precision,
    global_avg_pool,
    mul,
    pick,
    reference_precision,
    relu,
    reshape,
    set_precision,
    sigmoid,
    softmax,
    tensor_mean,
    tensor_sum,
)
from .conv import ConvSpec, conv2d, max_pool, unfold
from .fixture import FixtureFormatError, dump_tensor, load_tensor, parse_tensor, save_tensor
from .gradcheck import GradReport, grad_check

__all__ = [
    "ConvSpec",
    "FixtureFormatError",
    "GradReport",
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "TensorError",
    "activation",
    "add",
    "as_tensor",
    "batchnorm_infer",
    "concat",
    "conv2d",
    "default_dtype",
    "dump_tensor",
    "exp",
    "get_precision",
    "global_avg_pool",
    "grad_check",
    "load_tensor",
    "max_pool",
    "mul",
    "parse_tensor",
    "pick",
    "reference_precision",
    "relu",
    "reshape",
    "save_tensor",
    "set_precision",
    "sigmoid",
    "softmax",
    "tensor_mean",
    "tensor_sum",
    "unfold",
]
