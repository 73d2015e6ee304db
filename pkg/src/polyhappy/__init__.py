"""Polymer repeat-unit compiler and inverse-design toolkit."""

__version__ = "0.1.0"
