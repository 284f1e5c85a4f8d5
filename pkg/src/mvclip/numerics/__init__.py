from . import ops
from .gradcheck import NondeterministicLoss, grad_check
from .tensor import Parameter, Tensor, as_tensor, grad_enabled, no_grad

__all__ = [
    "NondeterministicLoss",
    "Parameter",
    "Tensor",
    "as_tensor",
    "grad_check",
    "grad_enabled",
    "no_grad",
    "ops",
]
