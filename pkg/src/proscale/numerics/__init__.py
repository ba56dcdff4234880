from .gradcheck import GradCheckReport, finite_diff_check
from .tensor import (
    Tensor,
    add,
    avgpool2d,
    bilinear_sample,
    broadcast_rows,
    concat,
    constant,
    elementwise,
    grad,
    index,
    layernorm,
    linear,
    matmul,
    maxpool2d,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    tree_leaves,
    tree_replace,
    tsum,
)

__all__ = [
    "GradCheckReport",
    "Tensor",
    "add",
    "avgpool2d",
    "bilinear_sample",
    "broadcast_rows",
    "concat",
    "constant",
    "elementwise",
    "finite_diff_check",
    "grad",
    "index",
    "layernorm",
    "linear",
    "matmul",
    "maxpool2d",
    "mul",
    "relu",
    "reshape",
    "scale",
    "sigmoid",
    "softmax",
    "tree_leaves",
    "tree_replace",
    "tsum",
]
