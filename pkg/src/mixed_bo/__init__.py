"""Cost-sensitive Bayesian optimization with mixed continuous and binary outputs."""

__version__ = "0.1.0"
