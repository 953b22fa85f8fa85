"""Debiased machine learning for longitudinal causal parameters."""

__version__ = "0.1.0"
