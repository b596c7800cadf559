"""Stein variational gradient descent: particle dynamics, mean-field PDE and equilibrium geometry."""

__version__ = "0.1.0"
