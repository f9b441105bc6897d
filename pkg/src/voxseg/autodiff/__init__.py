"""Differentiable tensor substrate: ops, parameter store, gradient checks."""

from .conv import conv3d, conv3d_reference, trilinear_upsample
from .gradcheck import GradCheckReport, gradient_check
from .params import ParameterStore
from .tensor import (
    AutodiffError,
    DtypeMismatchError,
    GraphError,
    InvalidAxisError,
    NonFiniteError,
    ShapeMismatchError,
    Tensor,
    add,
    backward,
    clamp,
    concat,
    default_dtype,
    div,
    gelu,
    instance_norm,
    layer_norm,
    log,
    matmul,
    mul,
    neg,
    no_grad,
    permute,
    precision,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    scale,
    set_default_dtype,
    sigmoid,
    softmax,
    split,
    sub,
    tensor,
)

__all__ = [
    "AutodiffError",
    "DtypeMismatchError",
    "GradCheckReport",
    "GraphError",
    "InvalidAxisError",
    "NonFiniteError",
    "ParameterStore",
    "ShapeMismatchError",
    "Tensor",
    "add",
    "backward",
    "clamp",
    "concat",
    "conv3d",
    "conv3d_reference",
    "default_dtype",
    "div",
    "gelu",
    "gradient_check",
    "instance_norm",
    "layer_norm",
    "log",
    "matmul",
    "mul",
    "neg",
    "no_grad",
    "permute",
    "precision",
    "reduce_mean",
    "reduce_sum",
    "relu",
    "reshape",
    "scale",
    "set_default_dtype",
    "sigmoid",
    "softmax",
    "split",
    "sub",
    "tensor",
    "trilinear_upsample",
]
