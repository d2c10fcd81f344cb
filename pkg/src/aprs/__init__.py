"""Pseudospectral simulation and estimate verification for hydrostatic and thin-domain flows."""

__version__ = "0.1.0"
