"""Bayesian model averaging over chain event graph stagings."""

__version__ = "0.1.0"
