from . import tensor as F
from .checkpoint import load_tensors, save_tensors
from .gradcheck import finite_diff_check
from .optim import AdamW, OptimizerState, cosine_multiplier, optimizer_step
from .tensor import NumericError, Parameter, Tensor, default_dtype, grad, no_grad, precision

__all__ = [
    "F", "Tensor", "Parameter", "NumericError", "grad", "no_grad", "precision", "default_dtype",
    "finite_diff_check", "AdamW", "OptimizerState", "optimizer_step", "cosine_multiplier",
    "save_tensors", "load_tensors",
]
