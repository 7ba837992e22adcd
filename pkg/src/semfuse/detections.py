"""Per-camera 2D detections: loading, foot-point ground projection, AOI filtering."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ParseError, PointAtInfinity, UnknownCamera
from .geometry import BoundingBox2D, CameraModel, GroundPoint, foot_point, project_to_ground
from .io import read_jsonl
from .semantics import AOI, aoi_contains_many, ground_front_sign

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Detection2D:
    camera_id: int
    frame: int
    box: BoundingBox2D
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def to_json(self) -> dict:
        b = self.box
        return {"frame": self.frame, "camera_id": self.camera_id, "x_min": b.x_min, "y_min": b.y_min,
                "x_max": b.x_max, "y_max": b.y_max, "confidence": self.confidence}


@dataclass(frozen=True)
class ProjectedDetection:
    origin: Detection2D
    ground: GroundPoint

    @property
    def camera_id(self) -> int:
        return self.origin.camera_id

    @property
    def confidence(self) -> float:
        return self.origin.confidence


Grouped = dict  # (frame, camera_id) -> list[Detection2D]


def parse_detection(rec: dict, require_confidence: bool = True) -> Detection2D:
    box = BoundingBox2D(float(rec["x_min"]), float(rec["y_min"]), float(rec["x_max"]), float(rec["y_max"]))
    conf = float(rec["confidence"]) if require_confidence or "confidence" in rec else 1.0
    return Detection2D(int(rec["camera_id"]), int(rec["frame"]), box, conf)


def load_detections(path, rig: Mapping[int, CameraModel] | None = None,
                    require_confidence: bool = True) -> dict[tuple[int, int], list[Detection2D]]:
    """Read a JSON Lines detections file, grouped by ``(frame, camera_id)``.

    Groups come out sorted by key; within a group file order is kept.
    """
    groups: dict[tuple[int, int], list[Detection2D]] = defaultdict(list)
    for lineno, rec in read_jsonl(path):
        try:
            det = parse_detection(rec, require_confidence)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad detection record: {exc}", str(path), lineno) from exc
        if rig is not None and det.camera_id not in rig:
            raise UnknownCamera(f"{path}:{lineno}: camera {det.camera_id} is not in the rig")
        groups[(det.frame, det.camera_id)].append(det)
    return dict(sorted(groups.items()))


def by_frame(groups: Mapping[tuple[int, int], Sequence[Detection2D]]) -> dict[int, list[Detection2D]]:
    """Flatten ``(frame, camera)`` groups into per-frame lists ordered by camera."""
    out: dict[int, list[Detection2D]] = defaultdict(list)
    for (frame, _), dets in sorted(groups.items()):
        out[frame].extend(dets)
    return dict(out)


def project_detections(dets: Iterable[Detection2D], rig: Mapping[int, CameraModel]) -> list[ProjectedDetection]:
    """Foot point of every box mapped to the ground plane.

    Detections whose foot maps to the horizon or behind the camera are
    dropped; the number dropped is logged.
    """
    out = []
    dropped = 0
    cache: dict[int, tuple] = {}
    for det in dets:
        cam = rig[det.camera_id]
        if det.camera_id not in cache:
            cache[det.camera_id] = (cam.homography, ground_front_sign(cam))
        H, sign = cache[det.camera_id]
        p = foot_point(det.box)
        try:
            g = project_to_ground(H, p)
        except PointAtInfinity:
            dropped += 1
            continue
        if sign is not None:
            w = H.H[2, 0] * p.x + H.H[2, 1] * p.y + H.H[2, 2]
            if w * sign <= 0:
                dropped += 1
                continue
        out.append(ProjectedDetection(det, g))
    if dropped:
        logger.warning("dropped %d detection(s) whose foot point does not reach the ground", dropped)
    return out


def filter_by_aoi(pdets: Sequence[ProjectedDetection], aoi: AOI) -> list[ProjectedDetection]:
    pdets = list(pdets)
    if not pdets:
        return []
    keep = aoi_contains_many(aoi, np.array([p.ground for p in pdets], dtype=float))
    return [p for p, k in zip(pdets, keep) if k]
