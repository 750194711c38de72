"""Minimal dense-tensor engine: autograd tensor, layer ops, conv backends."""

from . import functional
from .backend import BACKEND
from .tensor import Tensor, as_tensor, no_grad

__all__ = ["Tensor", "as_tensor", "no_grad", "functional", "BACKEND"]
