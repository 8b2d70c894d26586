"""Optimal controller synthesis for piecewise linear systems by grid abstraction refinement."""

__version__ = "0.1.0"
