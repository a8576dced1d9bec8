"""Terrain segmentation from sparse SURF-style features."""

from .featureset import CLASS_NAMES, FeatureSet, InterestPoint

__version__ = "0.1.0"

__all__ = ["CLASS_NAMES", "FeatureSet", "InterestPoint", "__version__"]
