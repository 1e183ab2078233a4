"""Nonlinear stability tools for barotropic gaseous stars."""

__version__ = "0.1.0"
