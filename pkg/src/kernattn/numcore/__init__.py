"""Dense tensors, reverse-mode autodiff, seeded RNG and gradient checking."""

from .gradcheck import GradCheckReport, grad_check, relative_error
from .rng import Rng, uniform_init
from .tensor import (
    ELEMENTWISE_TAGS,
    REDUCE_TAGS,
    DimensionError,
    NonFiniteError,
    Tensor,
    add,
    as_tensor,
    broadcast_to,
    check_finite,
    divide,
    elementwise,
    exp,
    getitem,
    log,
    matmul,
    minimum,
    multiply,
    negate,
    no_grad,
    reduce,
    relu,
    reshape,
    sqrt,
    square,
    subtract,
    take_rows,
    transpose,
)

__all__ = [
    "ELEMENTWISE_TAGS",
    "REDUCE_TAGS",
    "DimensionError",
    "GradCheckReport",
    "NonFiniteError",
    "Rng",
    "Tensor",
    "add",
    "as_tensor",
    "broadcast_to",
    "check_finite",
    "divide",
    "elementwise",
    "exp",
    "getitem",
    "grad_check",
    "log",
    "matmul",
    "minimum",
    "multiply",
    "negate",
    "no_grad",
    "reduce",
    "relative_error",
    "relu",
    "reshape",
    "sqrt",
    "square",
    "subtract",
    "take_rows",
    "transpose",
    "uniform_init",
]
