"""Gradient descent in emulated low-precision floating point with stochastic rounding."""

__version__ = "0.1.0"
