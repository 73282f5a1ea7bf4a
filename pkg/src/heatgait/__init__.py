"""Skeleton gait recognition with hop-extracted multi-scale graph convolution."""

__version__ = "0.1.0"
