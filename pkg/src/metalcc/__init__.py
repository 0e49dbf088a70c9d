"""Projection-domain metal segmentation with a 3D consistency check."""

__version__ = "0.1.0"
