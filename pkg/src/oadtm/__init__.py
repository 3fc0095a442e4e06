"""Temporal modeling operators for online action detection on unit-level feature streams."""

__version__ = "0.1.0"
