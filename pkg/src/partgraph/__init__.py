"""Disentangle part patterns from CNN feature maps into a multi-layer graph."""

__version__ = "0.1.0"
