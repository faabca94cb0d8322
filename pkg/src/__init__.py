"""Partially relevant video retrieval."""

__version__ = "0.1"
