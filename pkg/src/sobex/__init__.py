"""Numerical toolkit for planar Sobolev extension domains."""

__version__ = "0.1.0"
