"""Minimal dense-tensor engine with reverse-mode differentiation."""

from . import ops
from .ops import PRIMITIVE_KINDS, conv2d_reference, primitive_forward
from .tensor import (
    ConfigurationError,
    DimensionError,
    Node,
    Parameter,
    Tensor,
    UsageError,
    backward,
    default_dtype,
    detach,
    no_grad,
    precision,
    zero_grads,
)

__all__ = [
    "ops", "PRIMITIVE_KINDS", "conv2d_reference", "primitive_forward",
    "ConfigurationError", "DimensionError", "Node", "Parameter", "Tensor", "UsageError",
    "backward", "default_dtype", "detach", "no_grad", "precision", "zero_grads",
]
