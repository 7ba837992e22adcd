"""Projective camera model and image <-> ground-plane mappings.

Conventions: world units are meters with Z up and the ground plane at Z = 0;
image units are pixels with the origin at the top-left corner and y pointing
down. Pixel ``(u, v)`` covers the square ``[u, u+1) x [v, v+1)`` and its
centre sits at ``(u + 0.5, v + 0.5)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import BehindCamera, DegenerateCamera, DegenerateSegment, PointAtInfinity

W_EPS = 1e-12
_MAX_COND = 1e12


class ImagePoint(NamedTuple):
    x: float
    y: float


class GroundPoint(NamedTuple):
    X: float
    Y: float


@dataclass(frozen=True)
class Segment3D:
    """Vertical segment standing on the ground plane."""

    base: GroundPoint
    height: float

    def __post_init__(self):
        if not self.height > 0:
            raise ValueError(f"segment height must be positive, got {self.height}")


@dataclass(frozen=True)
class ImageSegment2D:
    foot: ImagePoint
    top: ImagePoint

    @property
    def length(self) -> float:
        return math.hypot(self.top.x - self.foot.x, self.top.y - self.foot.y)


@dataclass(frozen=True)
class BoundingBox2D:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"invalid box {self.as_tuple()}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def clipped(self, width: int, height: int) -> "BoundingBox2D | None":
        """Intersection with the image rectangle, or None if empty."""
        x0, y0 = max(self.x_min, 0.0), max(self.y_min, 0.0)
        x1, y1 = min(self.x_max, float(width)), min(self.y_max, float(height))
        if x0 >= x1 or y0 >= y1:
            return None
        return BoundingBox2D(x0, y0, x1, y1)


@dataclass(frozen=True, eq=False)
class Homography:
    """Image pixels -> ground-plane meters, in homogeneous coordinates."""

    H: np.ndarray

    def __post_init__(self):
        H = np.array(self.H, dtype=float)
        if H.shape != (3, 3):
            raise ValueError(f"homography must be 3x3, got {H.shape}")
        if not np.all(np.isfinite(H)) or abs(np.linalg.det(H)) == 0.0:
            raise DegenerateCamera("homography is singular")
        H.setflags(write=False)
        object.__setattr__(self, "H", H)


@dataclass(frozen=True, eq=False)
class CameraModel:
    camera_id: int
    P: np.ndarray
    width: int
    height: int
    H: Homography | None = None

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        if P.shape != (3, 4):
            raise ValueError(f"projection matrix must be 3x4, got {P.shape}")
        if not np.all(np.isfinite(P)) or np.linalg.matrix_rank(P) != 3:
            raise DegenerateCamera(f"camera {self.camera_id}: P must have rank 3")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"camera {self.camera_id}: image size must be positive")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)
        if self.H is not None and not isinstance(self.H, Homography):
            object.__setattr__(self, "H", Homography(self.H))

    @property
    def homography(self) -> Homography:
        """Explicit homography when the rig supplies one, else derived from P."""
        if self.H is not None:
            return self.H
        return ground_homography(self)

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates (right null vector of P)."""
        M, p4 = self.P[:, :3], self.P[:, 3]
        return -np.linalg.solve(M, p4)

    @property
    def depth_sign(self) -> float:
        return 1.0 if np.linalg.det(self.P[:, :3]) >= 0 else -1.0


def ground_homography(cam: CameraModel) -> Homography:
    G = cam.P[:, [0, 1, 3]]
    if np.linalg.cond(G) > _MAX_COND:
        raise DegenerateCamera(f"camera {cam.camera_id}: ground-plane restriction of P is singular")
    return Homography(np.linalg.inv(G))


def project_to_ground(H: Homography | np.ndarray, p: ImagePoint) -> GroundPoint:
    Hm = H.H if isinstance(H, Homography) else np.asarray(H, dtype=float)
    x, y = p
    X = Hm[0, 0] * x + Hm[0, 1] * y + Hm[0, 2]
    Y = Hm[1, 0] * x + Hm[1, 1] * y + Hm[1, 2]
    w = Hm[2, 0] * x + Hm[2, 1] * y + Hm[2, 2]
    if abs(w) <= W_EPS:
        raise PointAtInfinity(f"pixel ({x}, {y}) maps to the horizon")
    return GroundPoint(X / w, Y / w)


def pixels_to_ground(H: Homography | np.ndarray, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`project_to_ground`.

    Returns ``(ground, ok)`` where ``ground`` is (N, 2) and ``ok`` flags the
    rows whose dehomogenisation denominator was usable.
    """
    Hm = H.H if isinstance(H, Homography) else np.asarray(H, dtype=float)
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    hom = xy @ Hm[:, :2].T + Hm[:, 2]
    w = hom[:, 2]
    ok = np.abs(w) > W_EPS
    out = np.full((len(xy), 2), np.nan)
    out[ok] = hom[ok, :2] / w[ok, None]
    return out, ok


def project_to_image(P: np.ndarray, point: tuple[float, float, float], depth_sign: float | None = None) -> ImagePoint:
    """World point -> pixel. Raises if the point is at infinity or behind the camera."""
    P = np.asarray(P, dtype=float)
    if depth_sign is None:
        depth_sign = 1.0 if np.linalg.det(P[:, :3]) >= 0 else -1.0
    X, Y, Z = point
    u = P[0, 0] * X + P[0, 1] * Y + P[0, 2] * Z + P[0, 3]
    v = P[1, 0] * X + P[1, 1] * Y + P[1, 2] * Z + P[1, 3]
    w = P[2, 0] * X + P[2, 1] * Y + P[2, 2] * Z + P[2, 3]
    if abs(w) <= W_EPS:
        raise PointAtInfinity(f"world point {point} projects to infinity")
    if w * depth_sign < 0:
        raise BehindCamera(f"world point {point} is behind the camera")
    return ImagePoint(u / w, v / w)


def world_to_image(P: np.ndarray, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised projection of (N, 3) world points; ``ok`` excludes points at infinity or behind."""
    P = np.asarray(P, dtype=float)
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    hom = pts @ P[:, :3].T + P[:, 3]
    w = hom[:, 2]
    sign = 1.0 if np.linalg.det(P[:, :3]) >= 0 else -1.0
    ok = (np.abs(w) > W_EPS) & (w * sign > 0)
    out = np.full((len(pts), 2), np.nan)
    out[ok] = hom[ok, :2] / w[ok, None]
    return out, ok


def backproject_segment(cam: CameraModel, s: Segment3D) -> ImageSegment2D:
    X, Y = s.base
    foot = project_to_image(cam.P, (X, Y, 0.0), cam.depth_sign)
    top = project_to_image(cam.P, (X, Y, s.height), cam.depth_sign)
    return ImageSegment2D(foot, top)


def box_from_segment(seg: ImageSegment2D, aspect: float) -> BoundingBox2D:
    """Box whose vertical middle axis is ``seg``.

    The box height is the vertical extent of the segment and its width is
    ``aspect`` times that. A tilted segment yields the axis-aligned hull of
    the oriented rectangle built around it.
    """
    if not aspect > 0:
        raise ValueError("aspect must be positive")
    fx, fy = seg.foot
    tx, ty = seg.top
    dx, dy = tx - fx, ty - fy
    length = math.hypot(dx, dy)
    h = abs(dy)
    if length == 0.0 or h == 0.0:
        raise DegenerateSegment(f"segment {seg} has no vertical extent")
    half = 0.5 * aspect * h
    if dx == 0.0:
        return BoundingBox2D(fx - half, min(fy, ty), fx + half, max(fy, ty))
    # unit normal of the axis
    nx, ny = -dy / length, dx / length
    xs = (fx + half * nx, fx - half * nx, tx + half * nx, tx - half * nx)
    ys = (fy + half * ny, fy - half * ny, ty + half * ny, ty - half * ny)
    return BoundingBox2D(min(xs), min(ys), max(xs), max(ys))


def foot_point(b: BoundingBox2D) -> ImagePoint:
    return ImagePoint((b.x_min + b.x_max) / 2.0, b.y_max)


def iou(a: BoundingBox2D, b: BoundingBox2D) -> float:
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


# -- camera construction -----------------------------------------------------


def intrinsics(f: float, cx: float, cy: float, fy: float | None = None) -> np.ndarray:
    return np.array([[f, 0.0, cx], [0.0, f if fy is None else fy, cy], [0.0, 0.0, 1.0]])


def look_rotation(forward, up=(0.0, 0.0, 1.0), roll: float = 0.0) -> np.ndarray:
    """World->camera rotation for a camera looking along ``forward``.

    Camera axes: x right, y down, z forward.
    """
    f = np.asarray(forward, dtype=float)
    f = f / np.linalg.norm(f)
    right = np.cross(f, np.asarray(up, dtype=float))
    n = np.linalg.norm(right)
    if n < 1e-9:
        raise DegenerateCamera("forward direction is parallel to the up vector")
    right /= n
    down = np.cross(f, right)
    R = np.vstack([right, down, f])
    if roll:
        c, s = math.cos(roll), math.sin(roll)
        Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        R = Rz @ R
    return R


def projection_matrix(K: np.ndarray, R: np.ndarray, center) -> np.ndarray:
    C = np.asarray(center, dtype=float)
    t = -R @ C
    return K @ np.hstack([R, t[:, None]])
