"""Derivative-constrained neural-network training on a higher-order autodiff graph."""

__version__ = "0.1.0"
