"""Simulation and numerical checks for hub persistence in attachment graphs."""

__version__ = "0.1.0"
