"""Ordinal-entropy regularized regression on synthetic operator-learning tasks."""

__version__ = "0.1.0"
