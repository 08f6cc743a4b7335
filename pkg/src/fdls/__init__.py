"""Differential linear sampling for local perturbations of periodic layers."""

__version__ = "0.1.0"
