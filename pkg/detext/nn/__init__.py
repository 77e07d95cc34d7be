"""Minimal differentiable kernel: tensors, ops, Adam, gradient checks."""

from detext.nn.tensor import (
    ParameterTensor,
    ParamGroup,
    Tensor,
    backward,
    cast_parameters,
    no_grad,
    zero_grads,
)

__all__ = [
    "ParameterTensor",
    "ParamGroup",
    "Tensor",
    "backward",
    "cast_parameters",
    "no_grad",
    "zero_grads",
]
