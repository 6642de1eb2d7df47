"""Permanental point processes, convex calculus and optimal transport on lattice clouds."""

__version__ = "0.1.0"
