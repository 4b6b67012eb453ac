"""Reservoir discrete gradient integrators for dissipative systems."""

__version__ = "0.1.0"
