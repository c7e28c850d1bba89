"""Finite-width shallow networks as interacting particles: training, fluctuations and CLT checks."""

__version__ = "0.1.0"
