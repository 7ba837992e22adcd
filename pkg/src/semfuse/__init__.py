"""Semantic-aided fusion of multi-camera pedestrian detections."""

from .errors import ConfigError, DataError, SemfuseError
from .geometry import BoundingBox2D, CameraModel, GroundPoint, ImagePoint, Segment3D
from .semantics import AOI, GroundGrid, LabelMap, Locus

__version__ = "0.1.0"

__all__ = ["AOI", "BoundingBox2D", "CameraModel", "ConfigError", "DataError", "GroundGrid", "GroundPoint",
           "ImagePoint", "LabelMap", "Locus", "Segment3D", "SemfuseError", "__version__"]
