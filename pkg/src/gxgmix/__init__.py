"""Bayesian nonparametric detection of gene-gene interaction in case-control studies."""

__version__ = "0.1.0"
