"""Regularized parabolic p-Laplace laboratory."""

__version__ = "0.1.0"
