"""Threshold regression with jump and kink designs: estimation, continuity tests and grid bootstrap."""

__version__ = "0.1.0"
