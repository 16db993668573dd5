"""Identification of delay differential equations from sampled trajectories."""

__version__ = "0.1.0"
