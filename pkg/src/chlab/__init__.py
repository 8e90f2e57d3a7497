"""Cahn-Hilliard metastability lab on the one-dimensional torus."""

__version__ = "0.1.0"
