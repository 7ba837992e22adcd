"""Exception hierarchy.

Errors split into two families so the CLI can map them onto exit codes:
:class:`ConfigError` (exit 2) and :class:`DataError` (exit 3).
"""

from __future__ import annotations


class SemfuseError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(SemfuseError):
    pass


class DataError(SemfuseError):
    pass


class EmptyGroundClassSet(ConfigError):
    pass


class GeometryError(DataError):
    pass


class DegenerateCamera(GeometryError):
    pass


class PointAtInfinity(GeometryError):
    pass


class BehindCamera(GeometryError):
    pass


class DegenerateSegment(GeometryError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f"{path}:"
        if line is not None:
            loc += f"{line}:"
        super().__init__(f"{loc} {message}" if loc else message)
        self.path = path
        self.line = line


class UnknownCamera(DataError):
    pass


class EmptyLocus(DataError):
    pass


class GridMismatch(DataError):
    pass


class MissingMask(DataError):
    def __init__(self, camera_id: int, frame: int):
        super().__init__(f"no pedestrian mask for camera {camera_id}, frame {frame}")
        self.camera_id = camera_id
        self.frame = frame


class EmptyComponent(DataError):
    pass


class NoGroundTruth(DataError):
    pass


class DegenerateSpec(ConfigError):
    pass
