"""Numerical construction and verification of multi-peak solutions of the
singularly perturbed logarithmic Schrödinger equation
-eps^2 Lap u + V(x) u = u log u^2."""

__version__ = "0.1.0"
