"""Approximate controllability of crowd models: particle simulation and control synthesis."""

__version__ = "0.1.0"
