"""Gradation-limited composition optimization with band-limited coordinate networks."""

__version__ = "0.1.0"
