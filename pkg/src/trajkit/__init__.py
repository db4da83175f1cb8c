"""Skeleton-trajectory crime classification toolkit."""

__version__ = "0.1.0"
