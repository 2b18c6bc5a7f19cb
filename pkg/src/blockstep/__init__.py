"""Vectorized DIRK time integration with block Krylov solvers."""

__version__ = "0.1.0"
