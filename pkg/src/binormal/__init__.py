"""Numerical laboratory for perturbed self-similar vortex filaments."""

__version__ = "0.1.0"
