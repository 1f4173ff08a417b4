"""Simulation toolkit for optical wake-up receivers of autonomous sensor nodes."""

__version__ = "0.1.0"
