"""Numerics for the pinned H^{2|2} measure on strip graphs."""
__version__ = "0.1.0"
