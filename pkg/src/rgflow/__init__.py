"""Renormalisation-group flow engine for long-range O(n) lattice models."""
from .lattice_kernels import ModelSpec, QuadratureSpec

__version__ = "0.1.0"
__all__ = ["ModelSpec", "QuadratureSpec"]
