"""Homogenization-preconditioned solvers for elliptic problems on percolation clusters."""

__version__ = "0.1.0"
