"""Fractal pyramid networks on a small reverse-mode numpy engine."""

__version__ = "0.1.0"
