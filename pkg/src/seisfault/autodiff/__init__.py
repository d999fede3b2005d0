from . import ops
from .gradcheck import CHECKS, grad_check
from .tensor import OpGraph, OpNode, ShapeError, Tensor, backward

__all__ = [
    "CHECKS",
    "OpGraph",
    "OpNode",
    "ShapeError",
    "Tensor",
    "backward",
    "grad_check",
    "ops",
]
