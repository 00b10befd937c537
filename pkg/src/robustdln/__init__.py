"""Robust sparse regression with deep diagonal linear networks and l1 loss."""

__version__ = "0.1.0"
