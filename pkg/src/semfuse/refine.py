"""Semantic-driven joint refinement of back-projected pedestrian segments.

Every global detection m gets one vertical segment per camera k, all sharing
a height h_m. The cost rewards boxes whose vertical middle axis runs through
pedestrian-labelled pixels and penalises boxes covering background, summed
over cameras and normalised by image size. Segments move by steepest ascent
with a forward-difference gradient, each per-camera base confined to a disc
of radius R2 around the fused ground position.

Per pixel, the attraction term ``1/d`` (with d clamped to at least one
pixel) is integrated exactly over the part of the pixel row covered by the
box, and scaled by the covered fraction of the row height. A pixel fully
inside a box far from its axis gets ``1 - 1/d`` as usual, pixels straddling
box edges contribute in proportion, and over a uniformly labelled region the
pixel sum equals the continuous integral. This keeps the cost continuously
differentiable in the axis position instead of stepping at pixel boundaries.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import GeometryError, MissingMask
from .fusion import GlobalDetection
from .geometry import (BoundingBox2D, CameraModel, GroundPoint, ImageSegment2D, Segment3D,
                       backproject_segment, box_from_segment)
from .semantics import LabelMap

logger = logging.getLogger(__name__)

DEFAULT_PERSON_CLASSES = (12,)
STEP_NORMS = ("segment", "global")


@dataclass(frozen=True)
class OptimizerConfig:
    R2: float = 1.0
    omega: float = 1.0
    epsilon: float = 0.01
    tau0: float = 0.2
    max_iters: int = 8
    conv_tol: float = 1e-4
    aspect: float = 0.4
    step_norm: str = "segment"

    def __post_init__(self):
        if self.step_norm not in STEP_NORMS:
            raise ValueError(f"step_norm must be one of {STEP_NORMS}")
        for name in ("R2", "omega", "epsilon", "tau0", "max_iters", "conv_tol", "aspect"):
            if not getattr(self, name) > 0:
                raise ValueError(f"optimizer parameter {name} must be positive")


@dataclass(frozen=True, eq=False)
class PedestrianMask:
    camera_id: int
    frame: int
    mask: np.ndarray

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def height(self) -> int:
        return self.mask.shape[0]


def pedestrian_mask(label_map: LabelMap, person_classes=DEFAULT_PERSON_CLASSES) -> PedestrianMask:
    classes = sorted(set(int(c) for c in person_classes))
    if not classes:
        raise ValueError("person class set is empty")
    return PedestrianMask(label_map.camera_id, label_map.frame, np.isin(label_map.labels, classes))


@dataclass
class AdaptedSegmentSet:
    """Optimizer state: anchors (M, 2), heights (M,), per-camera bases (M, K, 2)."""

    camera_ids: list[int]
    anchors: np.ndarray
    heights: np.ndarray
    bases: np.ndarray

    @property
    def M(self) -> int:
        return len(self.heights)

    @property
    def K(self) -> int:
        return len(self.camera_ids)

    def segment(self, m: int, k: int) -> Segment3D:
        return Segment3D(GroundPoint(*self.bases[m, k]), float(self.heights[m]))

    def vector(self) -> np.ndarray:
        """Parameters in fixed order: (X, Y) per (m, k), m-major, then all heights."""
        return np.concatenate([self.bases.reshape(-1), self.heights])

    def with_vector(self, theta: np.ndarray) -> "AdaptedSegmentSet":
        n = self.M * self.K * 2
        return AdaptedSegmentSet(list(self.camera_ids), self.anchors,
                                 np.array(theta[n:], dtype=float),
                                 np.array(theta[:n], dtype=float).reshape(self.M, self.K, 2))

    def displacement(self) -> np.ndarray:
        """(M, K) distances of each per-camera base from its anchor."""
        if self.M == 0:
            return np.zeros((0, self.K))
        return np.linalg.norm(self.bases - self.anchors[:, None, :], axis=2)


def init_segments(globals_: Sequence[GlobalDetection], camera_ids: Sequence[int]) -> AdaptedSegmentSet:
    camera_ids = list(camera_ids)
    M, K = len(globals_), len(camera_ids)
    anchors = np.array([[g.ground.X, g.ground.Y] for g in globals_], dtype=float).reshape(M, 2)
    heights = np.array([g.height for g in globals_], dtype=float)
    bases = np.repeat(anchors[:, None, :], K, axis=1).reshape(M, K, 2)
    return AdaptedSegmentSet(camera_ids, anchors, heights, bases)


# -- cost ---------------------------------------------------------------------


def segment_box(cam: CameraModel, base, height: float, aspect: float) -> tuple[ImageSegment2D, BoundingBox2D] | None:
    """Back-projected axis and box, or None when the segment cannot be imaged."""
    try:
        seg = backproject_segment(cam, Segment3D(GroundPoint(float(base[0]), float(base[1])), float(height)))
        box = box_from_segment(seg, aspect)
    except (GeometryError, ValueError):
        return None
    if not all(math.isfinite(v) for v in box.as_tuple()):
        return None
    return seg, box


def _clamped_inv_antiderivative(t: np.ndarray) -> np.ndarray:
    """Antiderivative of 1 / max(|t|, 1)."""
    a = np.abs(t)
    return np.where(a <= 1.0, t, np.sign(t) * (1.0 + np.log(np.maximum(a, 1.0))))


class _CameraTerm:
    """Cost contribution of one camera for a frame."""

    def __init__(self, cam: CameraModel, mask: np.ndarray, cfg: OptimizerConfig):
        if mask.shape != (cam.height, cam.width):
            raise ValueError(f"camera {cam.camera_id}: mask shape {mask.shape} != image size")
        self.cam = cam
        self.mask = mask
        self.cfg = cfg
        self.n_pixels = mask.size
        self.n_person = int(mask.sum())

    def raw(self, bases: np.ndarray, heights: np.ndarray) -> float:
        """Sum of weighted per-pixel losses over the whole image."""
        cfg, W, H = self.cfg, self.cam.width, self.cam.height
        w_person, w_bg = cfg.omega, cfg.omega / 3.0
        items = []
        for m in range(len(heights)):
            sb = segment_box(self.cam, bases[m], heights[m], cfg.aspect)
            if sb is None:
                continue
            seg, box = sb
            u0, u1 = max(0, math.floor(box.x_min)), min(W, math.ceil(box.x_max))
            v0, v1 = max(0, math.floor(box.y_min)), min(H, math.ceil(box.y_max))
            if u0 >= u1 or v0 >= v1:
                continue
            items.append((seg, box, u0, u1, v0, v1))
        total = w_person * self.n_person
        if not items:
            return total
        U0 = min(i[2] for i in items)
        U1 = max(i[3] for i in items)
        V0 = min(i[4] for i in items)
        V1 = max(i[5] for i in items)
        prod = np.ones((V1 - V0, U1 - U0))
        for seg, box, u0, u1, v0, v1 in items:
            us = np.arange(u0, u1, dtype=float)
            vs = np.arange(v0, v1, dtype=float)
            cy = np.clip(np.minimum(vs + 1.0, box.y_max) - np.maximum(vs, box.y_min), 0.0, 1.0)
            t0 = np.maximum(us, box.x_min)
            t1 = np.maximum(np.minimum(us + 1.0, box.x_max), t0)
            fx, fy = seg.foot
            ax, ay = seg.top.x - fx, seg.top.y - fy
            slope = abs(ay) / math.hypot(ax, ay)
            # axis abscissa at each row centre
            xa = (fx + ax * (vs + 0.5 - fy) / ay)[:, None]
            inv_d = (_clamped_inv_antiderivative(slope * (t1 - xa))
                     - _clamped_inv_antiderivative(slope * (t0 - xa))) / slope
            prod[v0 - V0:v1 - V0, u0 - U0:u1 - U0] *= 1.0 - cy[:, None] * inv_d
        person = self.mask[V0:V1, U0:U1]
        delta = np.where(person, w_person * (prod - 1.0), w_bg * (1.0 - prod))
        return total + float(delta.sum())

    def psi(self, bases: np.ndarray, heights: np.ndarray) -> float:
        return -self.raw(bases, heights) / self.n_pixels


class Objective:
    """Cost and forward-difference gradient for one frame.

    Position parameters of camera k only touch that camera's term, so their
    finite differences re-evaluate a single camera.
    """

    def __init__(self, segments: AdaptedSegmentSet, masks: Mapping[int, PedestrianMask],
                 rig: Mapping[int, CameraModel], cfg: OptimizerConfig, frame: int | None = None):
        self.template = segments
        self.cfg = cfg
        self.terms = []
        for cid in segments.camera_ids:
            if cid not in masks:
                raise MissingMask(cid, -1 if frame is None else frame)
            msk = masks[cid]
            self.terms.append(_CameraTerm(rig[cid], np.asarray(msk.mask if isinstance(msk, PedestrianMask) else msk,
                                                                dtype=bool), cfg))
        self.n_evals = 0

    def split(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        M, K = self.template.M, self.template.K
        n = M * K * 2
        return theta[:n].reshape(M, K, 2), theta[n:]

    def terms_at(self, theta: np.ndarray) -> np.ndarray:
        bases, heights = self.split(theta)
        self.n_evals += len(self.terms)
        return np.array([t.psi(bases[:, k, :], heights) for k, t in enumerate(self.terms)])

    def cost(self, theta: np.ndarray) -> float:
        return float(self.terms_at(theta).sum())

    def gradient(self, theta: np.ndarray, eps: float | None = None,
                 active: np.ndarray | None = None) -> np.ndarray:
        eps = self.cfg.epsilon if eps is None else eps
        M, K = self.template.M, self.template.K
        base_terms = self.terms_at(theta)
        psi0 = float(base_terms.sum())
        grad = np.zeros_like(theta)
        for j in range(len(theta)):
            if active is not None and not active[j]:
                continue
            t = theta.copy()
            t[j] += eps
            bases, heights = self.split(t)
            terms = base_terms.copy()
            if j < M * K * 2:
                k = (j // 2) % K
                terms[k] = self.terms[k].psi(bases[:, k, :], heights)
                self.n_evals += 1
            else:
                terms = self.terms_at(t)
            grad[j] = (float(terms.sum()) - psi0) / eps
        return grad


def cost(segments: AdaptedSegmentSet, masks: Mapping[int, PedestrianMask], rig: Mapping[int, CameraModel],
         cfg: OptimizerConfig = OptimizerConfig()) -> float:
    return Objective(segments, masks, rig, cfg).cost(segments.vector())


def gradient(segments: AdaptedSegmentSet, masks: Mapping[int, PedestrianMask], rig: Mapping[int, CameraModel],
             cfg: OptimizerConfig = OptimizerConfig(), eps: float | None = None) -> np.ndarray:
    return Objective(segments, masks, rig, cfg).gradient(segments.vector(), eps)


def central_gradient(segments: AdaptedSegmentSet, masks, rig, cfg: OptimizerConfig, eps: float) -> np.ndarray:
    """Central-difference gradient; an independent check on :func:`gradient`."""
    obj = Objective(segments, masks, rig, cfg)
    theta = segments.vector()
    g = np.zeros_like(theta)
    for j in range(len(theta)):
        tp, tm = theta.copy(), theta.copy()
        tp[j] += eps
        tm[j] -= eps
        g[j] = (obj.cost(tp) - obj.cost(tm)) / (2.0 * eps)
    return g


# -- optimizer ----------------------------------------------------------------


@dataclass
class RefinedDetection:
    index: int
    anchor: GroundPoint
    height: float
    bases: dict[int, GroundPoint]
    boxes: dict[int, BoundingBox2D | None]
    confidence: float

    @property
    def ground(self) -> GroundPoint:
        """Consensus position: mean of the per-camera bases."""
        pts = list(self.bases.values())
        return GroundPoint(sum(p.X for p in pts) / len(pts), sum(p.Y for p in pts) / len(pts))


@dataclass
class RefineResult:
    detections: list[RefinedDetection]
    segments: AdaptedSegmentSet
    history: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    frozen: np.ndarray | None = None
    stop_reason: str = ""
    rejected: int = 0


def step_direction(g: np.ndarray, M: int, K: int, norm: str = "segment") -> np.ndarray:
    """Scale the gradient so that no displacement exceeds one unit.

    ``"segment"`` normalises each camera-adapted base (by its larger
    component) and each height by its own magnitude, so every segment
    moves one full step along its own ascent direction. ``"global"``
    divides the whole vector by its largest component.
    """
    g = np.asarray(g, dtype=float)
    if norm == "global":
        gmax = float(np.max(np.abs(g)))
        return g / gmax if gmax > 0 else g.copy()
    n_pos = M * K * 2
    gb = np.abs(g[:n_pos]).reshape(M, K, 2).max(axis=2)
    scale = np.concatenate([np.repeat(gb.reshape(-1), 2), np.abs(g[n_pos:])])
    return g / np.where(scale > 0, scale, 1.0)


def optimize(globals_: Sequence[GlobalDetection], masks: Mapping[int, PedestrianMask],
             rig: Mapping[int, CameraModel], cfg: OptimizerConfig = OptimizerConfig(),
             frame: int | None = None) -> RefineResult:
    """Jointly refine all detections of one frame.

    Each iteration moves the full parameter vector along the normalised
    gradient (see :func:`step_direction`) scaled by ``tau_i = tau0 / (1 + i)``,
    so ``tau_i`` bounds every per-segment displacement in meters. A segment
    whose move would leave its R2 disc is reset and frozen. A step that
    lowers the cost is retried once at half length; if that fails too the
    iteration makes no move and the next, shorter step is tried. The search
    stops when an accepted step changes the cost by less than ``conv_tol``,
    when every segment is frozen, or after ``max_iters`` iterations. Running
    out of iterations counts as converged (``"no_ascent"``) when the last,
    shortest step was rejected too.
    """
    camera_ids = sorted(rig)
    segs = init_segments(globals_, camera_ids)
    M, K = segs.M, segs.K
    result = RefineResult([], segs)
    if M == 0:
        result.converged = True
        result.stop_reason = "empty"
        return result

    obj = Objective(segs, masks, rig, cfg, frame)
    theta = segs.vector()
    n_pos = M * K * 2
    heights_min = 1e-3
    frozen = np.zeros((M, K), dtype=bool)
    psi = obj.cost(theta)
    history = [psi]
    converged, reason, it = False, "max_iters", 0

    direction = None
    rejected = 0
    for i in range(cfg.max_iters):
        it = i + 1
        if direction is None:
            active = np.concatenate([np.repeat(~frozen.reshape(-1), 2), ~frozen.all(axis=1)])
            g = obj.gradient(theta, active=active)
            g[~active] = 0.0
            gmax = float(np.max(np.abs(g))) if g.size else 0.0
            if gmax == 0.0:
                converged, reason = True, "stationary"
                break
            direction = step_direction(g, M, K, cfg.step_norm)
        tau = cfg.tau0 / (1.0 + i)
        accepted = None
        for step in (tau, tau / 2.0):
            cand = theta + step * direction
            hs = cand[n_pos:]
            low = hs < heights_min
            hs[low] = theta[n_pos:][low]
            cb = cand[:n_pos].reshape(M, K, 2)
            dist = np.linalg.norm(cb - segs.anchors[:, None, :], axis=2)
            breach = (dist > cfg.R2) & ~frozen
            if breach.any():
                cb[breach] = theta[:n_pos].reshape(M, K, 2)[breach]
            psi_c = obj.cost(cand)
            if psi_c >= psi:
                accepted = (cand, psi_c, breach)
                break
        if accepted is None:
            # same point, same gradient: only the step shrinks
            rejected += 1
            logger.debug("frame %s iter %d: step rejected", frame, it)
            if i == cfg.max_iters - 1:
                # even the shortest step of the schedule fails to ascend
                converged, reason = True, "no_ascent"
            continue
        direction = None
        cand, psi_c, breach = accepted
        frozen |= breach
        dpsi = psi_c - psi
        theta, psi = cand, psi_c
        history.append(psi)
        logger.debug("frame %s iter %d: psi=%.6g dpsi=%.3g", frame, it, psi, dpsi)
        if abs(dpsi) < cfg.conv_tol:
            converged, reason = True, "conv_tol"
            break
        if frozen.all():
            converged, reason = True, "all_frozen"
            break

    final = segs.with_vector(theta)
    dets = []
    for m, g_ in enumerate(globals_):
        bases, boxes = {}, {}
        for k, cid in enumerate(camera_ids):
            bases[cid] = GroundPoint(*map(float, final.bases[m, k]))
            sb = segment_box(rig[cid], final.bases[m, k], final.heights[m], cfg.aspect)
            boxes[cid] = None if sb is None else sb[1]
        dets.append(RefinedDetection(m, g_.ground, float(final.heights[m]), bases, boxes, g_.confidence))
    return RefineResult(dets, final, history, it, converged, frozen, reason, rejected)


def box_visible(box: BoundingBox2D | None, cam: CameraModel) -> bool:
    return box is not None and box.clipped(cam.width, cam.height) is not None
