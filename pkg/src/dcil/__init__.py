"""Divide & conquer imitation from a single demonstration, on a Dubins-car maze."""

__version__ = "0.1.0"
