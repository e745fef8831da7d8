"""Finite element laboratory for peakon formation in the stochastic Camassa-Holm equation."""

__version__ = "0.1.0"
