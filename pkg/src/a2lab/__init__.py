"""Numerical laboratory for a 2x2 matrix-weight A2 counterexample."""
__version__ = "0.1.0"
