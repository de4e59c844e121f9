"""Bayesian estimation of the threshold of a generalised Pareto tail spliced onto a gamma-mixture bulk."""

__version__ = '0.1.0'
