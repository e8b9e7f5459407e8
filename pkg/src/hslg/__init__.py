"""Simulation and verification tools for the half-space log-gamma polymer."""

__version__ = "0.1.0"
