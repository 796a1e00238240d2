"""Polar BEV geometry: view transform, temporal alignment, and polar box targets."""

__version__ = "0.1.0"
