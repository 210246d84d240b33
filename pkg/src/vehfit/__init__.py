"""Fitting a subcategory-aware deformable vehicle model to stereo observations."""

__version__ = "0.1.0"
