"""Simulation and error certification for open quantum systems in Gaussian environments."""

__version__ = "0.1.0"
