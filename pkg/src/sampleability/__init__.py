"""Numerical experiments on Wasserstein projection onto bounded-density-ratio classes,
Gaussian smoothing thresholds, porous-medium regularisation and constrained transport."""

__version__ = "0.1.0"
