"""Partially-interpretable neural networks for extreme-value regression.

bGEV point-process likelihoods, additive/linear/network parameter surfaces,
a small reverse-mode autodiff engine, scoring rules and desk-scale
simulation studies.
"""

__version__ = "0.1.0"
