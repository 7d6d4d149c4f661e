"""Catalog-constrained robust structural design with anchored Bayesian optimization."""

__version__ = "0.1.0"
