"""Doubly robust longitudinal effect estimation on panel data."""

__version__ = "0.1.0"
