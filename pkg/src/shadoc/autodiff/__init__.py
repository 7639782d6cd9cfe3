"""Dense tensors with reverse-mode automatic differentiation."""

from shadoc.autodiff import functional
from shadoc.autodiff.gradcheck import GradcheckReport, gradcheck
from shadoc.autodiff.tensor import (
    GradTape,
    Tensor,
    current_tape,
    debug_checks,
    get_dtype,
    no_grad,
    precision,
)

__all__ = [
    "GradTape",
    "GradcheckReport",
    "Tensor",
    "current_tape",
    "debug_checks",
    "functional",
    "get_dtype",
    "gradcheck",
    "no_grad",
    "precision",
]
