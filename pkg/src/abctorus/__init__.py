"""Finite-stage toolkit for conjugated-rotation constructions on the annulus torus."""

__version__ = "0.1.0"
