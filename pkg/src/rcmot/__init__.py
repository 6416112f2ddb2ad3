"""Radar-camera fusion multi-object tracking."""

__version__ = "0.1.0"
