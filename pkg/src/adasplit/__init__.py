"""Adaptive sub-sequence disentanglement for sequential recommendation."""

__version__ = "0.1.0"
