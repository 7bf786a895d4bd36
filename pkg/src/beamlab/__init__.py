"""Gaussian-beam tools for coefficient recovery in nonlinear wave equations on Riemannian domains."""

__version__ = "0.1.0"

from . import errors  # noqa: F401
from .kernels import BACKEND  # noqa: F401
