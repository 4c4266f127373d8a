"""Volumetric CNN localization of 3D cephalometric landmarks."""

from .estimator import LandmarkLocator, VolumePreprocessor
from .landmarks import LANDMARK_GROUPS, LANDMARK_NAMES, Group, LandmarkSet
from .volgrid import GridSpec, Volume

__all__ = [
    "LANDMARK_GROUPS",
    "LANDMARK_NAMES",
    "Group",
    "GridSpec",
    "LandmarkLocator",
    "LandmarkSet",
    "Volume",
    "VolumePreprocessor",
]
__version__ = "0.1.0"
