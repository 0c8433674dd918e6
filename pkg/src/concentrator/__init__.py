"""Numerical laboratory for spike concentration in coupled elliptic
systems on periodic 3-manifolds."""

__version__ = "0.1.0"
