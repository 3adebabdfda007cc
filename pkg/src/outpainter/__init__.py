"""Desk-scale video outpainting with a mask-conditioned diffusion transformer."""

__version__ = "0.1.0"
