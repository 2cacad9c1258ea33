"""Differentiable Newton-Euler dynamics and gray-box system identification."""

__version__ = "0.1.0"
