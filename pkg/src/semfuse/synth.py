"""Synthetic multi-camera scenes with planted ground truth.

Cameras stand on a ring around a square floor, with horizontal optical axes
and the principal point shifted towards the top of the image so the floor
fills most of the frame. Pedestrians are billboards: upright rectangles
facing each camera's image plane, so every rendered pedestrian is an exact
axis-aligned rectangle whose bottom-edge midpoint is the image of its
ground position.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateSpec
from .geometry import (BoundingBox2D, CameraModel, GroundPoint, intrinsics, look_rotation,
                       pixels_to_ground, projection_matrix, world_to_image)
from .io import save_rig, write_json, write_jsonl, write_label_map
from .semantics import pixel_centers

FLOOR, WALL, PERSON = 3, 0, 12


@dataclass(frozen=True)
class Pedestrian:
    X: float
    Y: float
    height: float = 1.7
    width: float = 0.68
    vx: float = 0.0
    vy: float = 0.0

    def at(self, frame: int) -> GroundPoint:
        return GroundPoint(self.X + self.vx * frame, self.Y + self.vy * frame)


@dataclass(frozen=True)
class SceneSpec:
    n_cameras: int = 4
    pedestrians: tuple[Pedestrian, ...] = ()
    extent: float = 10.0
    n_frames: int = 1
    image_size: tuple[int, int] = (640, 480)
    focal: float = 500.0
    principal_y: float = 60.0
    camera_height: float = 3.0
    ring_radius: float = 9.0
    calib_position_noise: float = 0.0
    calib_rotation_noise: float = 0.0
    projection_noise: float = 0.0  # horizontal camera shift (m); moves ground projections by the same vector
    detection_jitter: float = 0.0
    dropout: float = 0.0
    phantom_rate: float = 0.0
    min_visible: float = 0.3
    gt_min_visible: float = 0.0
    background_frames: int | None = None  # pedestrian-free label frames after the sequence; None = n_frames + 1
    seed: int = 0
    classes: dict = field(default_factory=lambda: {"floor": FLOOR, "wall": WALL, "person": PERSON})

    def validate(self):
        if self.n_cameras < 1:
            raise DegenerateSpec("need at least one camera")
        if not self.extent > 0 or self.n_frames < 1:
            raise DegenerateSpec("extent and frame count must be positive")
        if self.background_frames is not None and self.background_frames < 0:
            raise DegenerateSpec("background_frames must be non-negative")
        if not 0.0 <= self.dropout <= 1.0:
            raise DegenerateSpec("dropout must be a probability")
        if self.image_size[0] <= 0 or self.image_size[1] <= 0 or not self.focal > 0:
            raise DegenerateSpec("image size and focal length must be positive")
        if self.ring_radius <= 0 or self.camera_height <= 0:
            raise DegenerateSpec("cameras must stand above the ground, off the floor centre")
        for p in self.pedestrians:
            if not (p.height > 0 and p.width > 0):
                raise DegenerateSpec(f"pedestrian {p} needs positive height and width")


@dataclass
class Scene:
    spec: SceneSpec
    cameras: dict[int, CameraModel]           # rendering truth
    rig: dict[int, CameraModel]               # exported, possibly perturbed, calibration
    labels: dict[tuple[int, int], np.ndarray]     # (frame, camera_id) -> class raster
    instances: dict[tuple[int, int], np.ndarray]  # (frame, camera_id) -> pedestrian index or -1
    rects: dict[tuple[int, int, int], BoundingBox2D]  # (frame, camera_id, ped) -> rendered rectangle
    visible: dict[tuple[int, int, int], float]
    detections: list[dict]
    gt_boxes: list[dict]
    gt_points: list[dict]

    @property
    def frames(self) -> list[int]:
        """Frames with pedestrians and detections."""
        return list(range(self.spec.n_frames))

    @property
    def background(self) -> list[int]:
        """Label-only frames of the empty floor, as seen before or after people pass through."""
        n = self.spec.background_frames
        n = self.spec.n_frames + 1 if n is None else n
        return list(range(self.spec.n_frames, self.spec.n_frames + n))


def random_pedestrians(n: int, extent: float, rng: np.random.Generator, margin: float = 1.5,
                       min_sep: float = 1.0) -> tuple[Pedestrian, ...]:
    out: list[Pedestrian] = []
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > 10000:
            raise DegenerateSpec("cannot place pedestrians with the requested separation")
        X, Y = rng.uniform(margin, extent - margin, size=2)
        if any(math.hypot(X - p.X, Y - p.Y) < min_sep for p in out):
            continue
        h = float(rng.uniform(1.55, 1.9))
        out.append(Pedestrian(float(X), float(Y), h, 0.4 * h))
    return tuple(out)


def _pose(k: int, spec: SceneSpec) -> tuple[np.ndarray, float]:
    angle = 2.0 * math.pi * k / spec.n_cameras + math.pi / 4.0
    c = spec.extent / 2.0
    pos = np.array([c + spec.ring_radius * math.cos(angle), c + spec.ring_radius * math.sin(angle), spec.camera_height])
    return pos, angle + math.pi


def ring_cameras(spec: SceneSpec, rng: np.random.Generator | None = None) -> dict[int, CameraModel]:
    W, Hh = spec.image_size
    K = intrinsics(spec.focal, W / 2.0, spec.principal_y)
    out = {}
    for k in range(spec.n_cameras):
        pos, yaw = _pose(k, spec)
        pitch, roll = 0.0, 0.0
        if rng is not None:
            pos = pos + rng.normal(0.0, spec.calib_position_noise, size=3) if spec.calib_position_noise else pos
            if spec.projection_noise:
                pos = pos + np.r_[rng.normal(0.0, spec.projection_noise, size=2), 0.0]
            if spec.calib_rotation_noise:
                dyaw, pitch, roll = rng.normal(0.0, spec.calib_rotation_noise, size=3)
                yaw += dyaw
        fwd = (math.cos(yaw) * math.cos(pitch), math.sin(yaw) * math.cos(pitch), -math.sin(pitch))
        R = look_rotation(fwd, roll=roll)
        out[k + 1] = CameraModel(k + 1, projection_matrix(K, R, pos), W, Hh)
    return out


def _background(cam: CameraModel, spec: SceneSpec) -> np.ndarray:
    xy = pixel_centers(cam.width, cam.height)
    ground, ok = pixels_to_ground(cam.homography, xy)
    # keep only rays that meet the ground in front of the camera
    Hm = cam.homography.H
    w = xy @ Hm[2, :2] + Hm[2, 2]
    ok &= w * cam.depth_sign > 0
    with np.errstate(invalid="ignore"):
        on_floor = ok & (ground[:, 0] >= 0) & (ground[:, 0] <= spec.extent) \
            & (ground[:, 1] >= 0) & (ground[:, 1] <= spec.extent)
    lab = np.where(on_floor, spec.classes["floor"], spec.classes["wall"]).astype(np.uint8)
    return lab.reshape(cam.height, cam.width)


def billboard_rect(cam: CameraModel, p: GroundPoint, height: float, width: float) -> tuple[BoundingBox2D, float] | None:
    """Image rectangle of a billboard facing the camera's image plane, plus its depth."""
    M = cam.P[:, :3]
    depth = float(M[2] @ np.array([p.X, p.Y, 0.0]) + cam.P[2, 3])
    if depth <= 1e-6:
        return None
    # camera x axis in world coords (row 0 of R, recovered from P = K[R|t] with zero skew)
    right = np.cross(M[1], M[2])
    right = right / np.linalg.norm(right)
    half = 0.5 * width * right
    pts = np.array([[p.X, p.Y, 0.0] - half, [p.X, p.Y, 0.0] + half,
                    [p.X, p.Y, height] - half, [p.X, p.Y, height] + half])
    img, ok = world_to_image(cam.P, pts)
    if not ok.all():
        return None
    x0, y0 = img.min(axis=0)
    x1, y1 = img.max(axis=0)
    return BoundingBox2D(float(x0), float(y0), float(x1), float(y1)), depth


def _pixel_span(lo: float, hi: float, n: int) -> tuple[int, int]:
    """Pixel indices whose centres lie in [lo, hi)."""
    a = max(0, math.ceil(lo - 0.5))
    b = min(n, math.ceil(hi - 0.5))
    return a, b


def generate(spec: SceneSpec) -> Scene:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    cameras = ring_cameras(spec)
    noisy = spec.calib_position_noise > 0 or spec.calib_rotation_noise > 0 or spec.projection_noise > 0
    rig = ring_cameras(spec, rng) if noisy else cameras
    W, Hh = spec.image_size
    person = spec.classes["person"]

    labels, instances, rects, visible = {}, {}, {}, {}
    detections, gt_boxes, gt_points = [], [], []
    backgrounds = {cid: _background(cam, spec) for cid, cam in cameras.items()}
    for frame in range(spec.n_frames):
        for ped_i, ped in enumerate(spec.pedestrians):
            g = ped.at(frame)
            gt_points.append({"frame": frame, "X": g.X, "Y": g.Y})
        for cid, cam in cameras.items():
            lab = backgrounds[cid].copy()
            inst = np.full((Hh, W), -1, dtype=np.int32)
            drawn = []
            for ped_i, ped in enumerate(spec.pedestrians):
                r = billboard_rect(cam, ped.at(frame), ped.height, ped.width)
                if r is not None:
                    drawn.append((r[1], ped_i, r[0]))
            # painter's order: far to near
            drawn.sort(key=lambda t: (-t[0], t[1]))
            for _, ped_i, box in drawn:
                rects[(frame, cid, ped_i)] = box
                u0, u1 = _pixel_span(box.x_min, box.x_max, W)
                v0, v1 = _pixel_span(box.y_min, box.y_max, Hh)
                if u0 < u1 and v0 < v1:
                    lab[v0:v1, u0:u1] = person
                    inst[v0:v1, u0:u1] = ped_i
            for _, ped_i, box in sorted(drawn, key=lambda t: t[1]):
                u0, u1 = _pixel_span(box.x_min, box.x_max, W)
                v0, v1 = _pixel_span(box.y_min, box.y_max, Hh)
                full = max(0, u1 - u0) * max(0, v1 - v0)
                seen = int((inst[v0:v1, u0:u1] == ped_i).sum()) if full else 0
                vis = seen / full if full else 0.0
                visible[(frame, cid, ped_i)] = vis
                clipped = box.clipped(W, Hh)
                if clipped is not None and full > 0 and vis >= spec.gt_min_visible:
                    gt_boxes.append({"frame": frame, "camera_id": cid, "x_min": clipped.x_min,
                                     "y_min": clipped.y_min, "x_max": clipped.x_max, "y_max": clipped.y_max,
                                     "pedestrian": ped_i})
            labels[(frame, cid)] = lab
            instances[(frame, cid)] = inst

            # detections are drawn against the rendered truth, in pedestrian order
            for ped_i in range(len(spec.pedestrians)):
                box = rects.get((frame, cid, ped_i))
                if box is None or visible.get((frame, cid, ped_i), 0.0) < spec.min_visible:
                    continue
                if box.clipped(W, Hh) is None:
                    continue
                drop = rng.random() < spec.dropout if spec.dropout > 0 else False
                conf = float(rng.uniform(0.5, 1.0))
                jit = rng.normal(0.0, spec.detection_jitter, size=4) if spec.detection_jitter > 0 else np.zeros(4)
                if drop:
                    continue
                b = np.array(box.as_tuple()) + jit
                if not (b[0] < b[2] and b[1] < b[3]):
                    continue
                detections.append(_det(frame, cid, b, conf))
            if spec.phantom_rate > 0:
                for _ in range(int(rng.poisson(spec.phantom_rate))):
                    b = _phantom_box(cam, backgrounds[cid], spec, rng)
                    if b is not None:
                        detections.append(_det(frame, cid, b, float(rng.uniform(0.5, 1.0))))
    scene = Scene(spec, cameras, rig, labels, instances, rects, visible, detections, gt_boxes, gt_points)
    for frame in scene.background:
        for cid in cameras:
            labels[(frame, cid)] = backgrounds[cid].copy()
            instances[(frame, cid)] = np.full((Hh, W), -1, dtype=np.int32)
    return scene


def _det(frame: int, cid: int, b, conf: float) -> dict:
    return {"frame": frame, "camera_id": cid, "x_min": float(b[0]), "y_min": float(b[1]),
            "x_max": float(b[2]), "y_max": float(b[3]), "confidence": conf}


def _phantom_box(cam: CameraModel, background: np.ndarray, spec: SceneSpec, rng: np.random.Generator):
    """Spurious detection whose foot lies on the ground outside the floor."""
    Hm = cam.homography.H
    vs, us = np.nonzero(background == spec.classes["wall"])
    if vs.size == 0:
        return None
    xy = np.stack([us + 0.5, vs + 0.5], axis=1).astype(float)
    w = xy @ Hm[2, :2] + Hm[2, 2]
    ground, ok = pixels_to_ground(Hm, xy)
    ok &= w * cam.depth_sign > 0
    idx = np.nonzero(ok)[0]
    if idx.size == 0:
        return None
    j = int(idx[rng.integers(idx.size)])
    foot = xy[j]
    g = ground[j]
    r = billboard_rect(cam, GroundPoint(float(g[0]), float(g[1])), 1.7, 0.68)
    if r is None:
        return None
    h = r[0].height
    wd = r[0].width
    return np.array([foot[0] - wd / 2, foot[1] - h, foot[0] + wd / 2, foot[1]])


def scene_config(extra: dict | None = None) -> dict:
    cfg = {
        "rig": "rig.json",
        "labels": "labels/cam{camera_id}/{frame:06}.png",
        "detections": "detections.jsonl",
        "ground_truth": "gt_boxes.jsonl",
        "gt_modality": "boxes",
        "ground_classes": [FLOOR],
        "person_classes": [PERSON],
        "output_dir": "out",
    }
    cfg.update(extra or {})
    return cfg


def write_scene(scene: Scene, out_dir, grid_cell: float = 0.05) -> Path:
    """Write rig, label maps, detections, ground truth and a run config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_rig(scene.rig, out / "rig.json")
    for (frame, cid), lab in sorted(scene.labels.items()):
        write_label_map(out / "labels" / f"cam{cid}" / f"{frame:06}.png", lab)
    write_jsonl(out / "detections.jsonl", scene.detections)
    write_jsonl(out / "gt_boxes.jsonl", [{k: v for k, v in g.items() if k != "pedestrian"} for g in scene.gt_boxes])
    write_jsonl(out / "gt_points.jsonl", scene.gt_points)
    spec = asdict(scene.spec)
    write_json(out / "scene.json", spec)
    pad = 1.0
    n = int(math.ceil((scene.spec.extent + 2 * pad) / grid_cell))
    classes = scene.spec.classes
    cfg = scene_config({
        "ground_classes": [classes["floor"]],
        "person_classes": [classes["person"]],
        "grid": {"cell_size": grid_cell, "origin": [-pad, -pad], "cols": n, "rows": n},
    })
    write_json(out / "config.json", cfg)
    return out
