"""Transformer attention as a kernel method."""

__version__ = "0.1.0"
