from src.autodiff import ops
from src.autodiff.gradcheck import GradCheckReport, finite_difference_grad, grad_check
from src.autodiff.tensor import Tape, Tensor, backward, no_grad, parameter

__all__ = [
    "GradCheckReport",
    "Tape",
    "Tensor",
    "backward",
    "finite_difference_grad",
    "grad_check",
    "no_grad",
    "ops",
    "parameter",
]
