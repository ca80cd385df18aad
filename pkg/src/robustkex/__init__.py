"""Robust and fair kidney exchange clearing."""

__version__ = "0.1.0"
