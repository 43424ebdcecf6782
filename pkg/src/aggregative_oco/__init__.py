"""Distributed online convex optimization with an aggregative variable."""

__version__ = "0.1.0"
