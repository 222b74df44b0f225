"""Parabolic boundary Harnack laboratory: exact parabolic polynomials, caloric solvers, quotient regularity."""
__version__ = "0.1.0"
