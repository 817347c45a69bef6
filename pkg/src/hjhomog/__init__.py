"""Effective Hamiltonians of 1-d nonconvex viscous Hamilton-Jacobi equations."""

__version__ = "0.1.0"
