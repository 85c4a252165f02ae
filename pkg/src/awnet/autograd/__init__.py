from . import functional
from .gradcheck import GradCheckReport, check_gradients, finite_difference_grad, kink_mask, max_relative_error
from .tensor import Parameter, Tensor, is_grad_enabled, no_grad

__all__ = [
    "GradCheckReport",
    "Parameter",
    "Tensor",
    "check_gradients",
    "finite_difference_grad",
    "functional",
    "is_grad_enabled",
    "kink_mask",
    "max_relative_error",
    "no_grad",
]
