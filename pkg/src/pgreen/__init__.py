"""Numerical laboratory for p-Green functions on rotationally symmetric 3-manifolds."""

__version__ = "0.1.0"
