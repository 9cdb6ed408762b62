"""Minimal reverse-mode differentiation engine on numpy arrays."""
from .gradcheck import finite_difference_check
from .ops import *  # noqa: F401,F403
from .ops import __all__ as _ops_all
from .optim import adam_step
from .tensor import Parameter, Tape, Tensor

__all__ = ["Parameter", "Tape", "Tensor", "adam_step", "finite_difference_check"] + list(_ops_all)
