from . import ops
from .tensor import Tensor, backward, no_grad

__all__ = ["Tensor", "backward", "no_grad", "ops"]
