"""Floquet-Bloch / Thomas-line numerics for periodic Schroedinger operators on cylinders."""

__version__ = "0.1.0"
