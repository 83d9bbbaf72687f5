"""Symmetry invariance of adapting input-output systems."""

__version__ = "0.1.0"
