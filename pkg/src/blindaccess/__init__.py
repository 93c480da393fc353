"""Blind asynchronous active-user detection for grant-free random access."""

__version__ = "0.1.0"
