from .core import DTYPE, Node, Tensor, as_tensor, backward, no_grad, topological_order
from .gradcheck import grad_check, grad_check_many, numerical_grad, relative_error
from .ops import (
    ConfigurationError,
    ShapeError,
    add,
    bilinear_matrix,
    conv2d,
    conv_transpose2d,
    div,
    gelu,
    layer_norm,
    linear,
    matmul,
    mean,
    mul,
    reshape,
    resize_bilinear,
    sigmoid,
    softmax,
    softplus,
    sub,
    sum,
    transpose,
)

__all__ = [
    "DTYPE", "Node", "Tensor", "as_tensor", "backward", "no_grad", "topological_order",
    "grad_check", "grad_check_many", "numerical_grad", "relative_error",
    "ConfigurationError", "ShapeError", "add", "bilinear_matrix", "conv2d",
    "conv_transpose2d", "div", "gelu", "layer_norm", "linear", "matmul", "mean",
    "mul", "reshape", "resize_bilinear", "sigmoid", "softmax", "softplus", "sub",
    "sum", "transpose",
]
