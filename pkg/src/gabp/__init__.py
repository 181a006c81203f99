"""Gaussian belief propagation for pairwise linear Gaussian network models."""

__version__ = "0.1.0"
