"""Detection metrics: greedy matching, P/R/F, PR-curve AUC, N-MODA and N-MODP."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .errors import NoGroundTruth
from .geometry import BoundingBox2D, GroundPoint, iou

DEFAULT_IOU = 0.5
DEFAULT_RADIUS = 0.5


@dataclass
class MatchResult:
    matches: list[tuple[int, int, float]] = field(default_factory=list)  # (det, gt, quality in [0, 1])
    fp: list[int] = field(default_factory=list)
    fn: list[int] = field(default_factory=list)

    @property
    def tp(self) -> int:
        return len(self.matches)


def box_overlap(a: BoundingBox2D, b: BoundingBox2D) -> float:
    """Overlap comparator behind the box criterion (IoU)."""
    return iou(a, b)


def _confidence_order(confidences: Sequence[float]) -> list[int]:
    return sorted(range(len(confidences)), key=lambda i: (-confidences[i], i))


def match_boxes(dets: Sequence[BoundingBox2D], confidences: Sequence[float], gts: Sequence[BoundingBox2D],
                iou_threshold: float = DEFAULT_IOU,
                overlap: Callable[[BoundingBox2D, BoundingBox2D], float] = box_overlap) -> MatchResult:
    """Greedy one-to-one matching in descending detection confidence."""
    res = MatchResult()
    used = [False] * len(gts)
    for i in _confidence_order(confidences):
        best, best_o = -1, -1.0
        for j, g in enumerate(gts):
            if used[j]:
                continue
            o = overlap(dets[i], g)
            if o >= iou_threshold and o > best_o:
                best, best_o = j, o
        if best < 0:
            res.fp.append(i)
        else:
            used[best] = True
            res.matches.append((i, best, best_o))
    res.fn = [j for j, u in enumerate(used) if not u]
    return res


def match_points(dets: Sequence[GroundPoint], confidences: Sequence[float], gts: Sequence[GroundPoint],
                 radius: float = DEFAULT_RADIUS) -> MatchResult:
    """Greedy matching to the nearest unmatched ground-truth point within ``radius``.

    Match quality is ``1 - d / radius``.
    """
    res = MatchResult()
    used = [False] * len(gts)
    for i in _confidence_order(confidences):
        best, best_d = -1, math.inf
        for j, g in enumerate(gts):
            if used[j]:
                continue
            d = math.hypot(dets[i][0] - g[0], dets[i][1] - g[1])
            if d <= radius and d < best_d:
                best, best_d = j, d
        if best < 0:
            res.fp.append(i)
        else:
            used[best] = True
            res.matches.append((i, best, 1.0 - best_d / radius))
    res.fn = [j for j, u in enumerate(used) if not u]
    return res


@dataclass
class Metrics:
    precision: float
    recall: float
    f_score: float
    n_moda: float
    n_moda_raw: float
    n_modp: float
    tp: int
    fp: int
    fn: int
    n_gt: int
    auc: float = float("nan")
    threshold: float | None = None

    def to_json(self) -> dict:
        return asdict(self)


def compute_metrics(results: Iterable[MatchResult]) -> Metrics:
    tp = fp = fn = 0
    quality = 0.0
    for r in results:
        tp += r.tp
        fp += len(r.fp)
        fn += len(r.fn)
        quality += sum(q for _, _, q in r.matches)
    n_gt = tp + fn
    if n_gt == 0:
        raise NoGroundTruth("no ground-truth objects to evaluate against")
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / n_gt
    f = 2 * p * r / (p + r) if p + r else 0.0
    # integer numerator keeps hand-derived fractions exact
    moda = (n_gt - fp - fn) / n_gt
    modp = quality / tp if tp else 0.0
    return Metrics(p, r, f, min(1.0, max(0.0, moda)), moda, modp, tp, fp, fn, n_gt)


@dataclass
class PRCurve:
    thresholds: list[float]
    precision: list[float]
    recall: list[float]
    f_score: list[float]
    auc: float
    best_threshold: float | None
    best_f: float


def _auc(recall: Sequence[float], precision: Sequence[float]) -> float:
    """Trapezoidal area under precision over recall, anchored at recall 0."""
    if not recall:
        return 0.0
    pts = sorted(zip(recall, precision), key=lambda t: t[0])
    pts = [(0.0, pts[0][1])] + pts
    area = 0.0
    for (r0, p0), (r1, p1) in zip(pts, pts[1:]):
        area += (r1 - r0) * (p0 + p1) / 2.0
    return area


def pr_curve(frames: Sequence[tuple[Sequence, Sequence[float], Sequence]], match: Callable) -> PRCurve:
    """Sweep the confidence threshold over the unique detection confidences.

    ``frames`` holds ``(detections, confidences, ground_truth)`` for each
    evaluation unit (frame, camera); ``match`` is called as
    ``match(dets, confidences, gts)``. Thresholds are applied as
    ``confidence >= t``. Because matching is greedy in confidence order, the
    matches of the retained detections do not depend on the dropped ones, so
    a single matching pass per unit yields every point of the curve.
    """
    n_gt = 0
    events: list[tuple[float, bool, float]] = []  # (confidence, is_tp, quality)
    for dets, confs, gts in frames:
        n_gt += len(gts)
        res = match(dets, confs, gts)
        for i, _, q in res.matches:
            events.append((confs[i], True, q))
        for i in res.fp:
            events.append((confs[i], False, 0.0))
    if n_gt == 0:
        raise NoGroundTruth("no ground-truth objects to evaluate against")
    thresholds = sorted({c for c, _, _ in events}, reverse=True)
    events.sort(key=lambda e: -e[0])
    P, R, F = [], [], []
    tp = fp = 0
    k = 0
    for t in thresholds:
        while k < len(events) and events[k][0] >= t:
            if events[k][1]:
                tp += 1
            else:
                fp += 1
            k += 1
        p = tp / (tp + fp)
        r = tp / n_gt
        P.append(p)
        R.append(r)
        F.append(2 * p * r / (p + r) if p + r else 0.0)
    best_i = max(range(len(F)), key=lambda i: (F[i], thresholds[i])) if F else None
    return PRCurve(thresholds, P, R, F, _auc(R, P),
                   thresholds[best_i] if best_i is not None else None,
                   F[best_i] if best_i is not None else 0.0)


def threshold_units(frames: Sequence[tuple[Sequence, Sequence[float], Sequence]], t: float | None):
    """Drop detections below ``t`` in every unit."""
    if t is None:
        return list(frames)
    out = []
    for dets, confs, gts in frames:
        keep = [i for i, c in enumerate(confs) if c >= t]
        out.append(([dets[i] for i in keep], [confs[i] for i in keep], gts))
    return out


def evaluate_units(frames, match: Callable, at: str = "best_f") -> Metrics:
    """Metrics for one camera (or the ground plane) at the chosen operating point.

    ``at="best_f"`` thresholds at the confidence maximising the F-score;
    ``at="all"`` keeps every detection.
    """
    curve = pr_curve(frames, match)
    t = curve.best_threshold if at == "best_f" else None
    m = compute_metrics(match(d, c, g) for d, c, g in threshold_units(frames, t))
    m.auc = curve.auc
    m.threshold = t
    return m


def average_metrics(per_camera: Mapping[int, Metrics]) -> dict:
    """Arithmetic mean of each indicator across cameras."""
    keys = ("precision", "recall", "f_score", "auc", "n_moda", "n_moda_raw", "n_modp")
    n = len(per_camera)
    if n == 0:
        raise NoGroundTruth("no camera has ground truth")
    return {k: sum(getattr(m, k) for m in per_camera.values()) / n for k in keys}
