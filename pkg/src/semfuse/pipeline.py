"""End-to-end stages driven by a :class:`PipelineConfig`."""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence, TypeVar

from .config import PipelineConfig
from .detections import Detection2D, filter_by_aoi, load_detections, parse_detection, project_detections
from .errors import EmptyLocus, MissingMask, ParseError, UnknownCamera
from .evaluation import average_metrics, evaluate_units, match_boxes, match_points, pr_curve
from .fusion import fuse, globalize
from .geometry import BoundingBox2D, CameraModel, GroundPoint
from .io import (discover_frames, label_path, load_aoi, load_rig, read_jsonl, read_label_map, save_aoi,
                 write_json, write_jsonl)
from .refine import box_visible, optimize, pedestrian_mask, segment_box
from .semantics import AOI, GroundGrid, build_aoi, camera_locus, fit_grid, temporal_mode

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

AOI_MASK = "aoi.pgm"
AOI_HEADER = "aoi.json"


def parallel_map(fn: Callable[[T], R], items: Sequence[T], jobs: int = 1) -> list[R]:
    """Order-preserving map; the result never depends on ``jobs``."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _grid(cfg: PipelineConfig, rig: Mapping[int, CameraModel]) -> GroundGrid:
    g = cfg.grid
    if g.explicit:
        return GroundGrid(tuple(g.origin), g.cell_size, int(g.cols), int(g.rows))
    return fit_grid(rig.values(), g.cell_size, g.padding, g.max_range)


def _label_frames(cfg: PipelineConfig, cid: int) -> list[int]:
    frames = discover_frames(cfg.labels, cid)
    if cfg.frames is not None:
        wanted = set(cfg.frames)
        frames = [f for f in frames if f in wanted]
    if cfg.temporal_window is not None:
        frames = frames[:cfg.temporal_window]
    return frames


# -- build-aoi ----------------------------------------------------------------


def compute_aoi(cfg: PipelineConfig, rig: Mapping[int, CameraModel] | None = None) -> AOI:
    rig = load_rig(cfg.rig) if rig is None else rig
    grid = _grid(cfg, rig)
    tasks = [(cid, f) for cid in rig for f in _label_frames(cfg, cid)]
    if not tasks:
        raise EmptyLocus(f"no label maps match {cfg.labels}")

    def locus(task):
        cid, f = task
        lab = read_label_map(label_path(cfg.labels, cid, f), cid, f)
        return camera_locus(lab, rig[cid], grid)

    loci = parallel_map(locus, tasks, cfg.jobs)
    per_cam: dict[int, list] = defaultdict(list)
    for (cid, _), loc in zip(tasks, loci):
        per_cam[cid].append(loc)
    smoothed = [temporal_mode(per_cam[cid]) for cid in sorted(per_cam)]
    return build_aoi(smoothed, cfg.ground_classes)


def aoi_paths(cfg: PipelineConfig) -> tuple[Path, Path]:
    return cfg.out / AOI_MASK, cfg.out / AOI_HEADER


def run_build_aoi(cfg: PipelineConfig) -> dict:
    """Build and save the AOI; returns coverage statistics."""
    aoi = compute_aoi(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    save_aoi(aoi, *aoi_paths(cfg))
    n = int(aoi.inside.sum())
    return {"cells": n, "total_cells": aoi.grid.size, "fraction": n / aoi.grid.size, "area_m2": aoi.area,
            "grid": aoi.grid.to_json()}


def ensure_aoi(cfg: PipelineConfig, rig) -> AOI:
    mask, header = aoi_paths(cfg)
    if mask.exists() and header.exists():
        return load_aoi(mask, header)
    aoi = compute_aoi(cfg, rig)
    cfg.out.mkdir(parents=True, exist_ok=True)
    save_aoi(aoi, mask, header)
    return aoi


# -- detect -------------------------------------------------------------------


@dataclass
class FrameOutput:
    frame: int
    camera: list[dict] = field(default_factory=list)
    ground: list[dict] = field(default_factory=list)
    refined: list[dict] = field(default_factory=list)
    diagnostics: list[tuple[int, int, float]] = field(default_factory=list)


def _box_record(frame: int, cid: int, box: BoundingBox2D, conf: float, detection: int | None = None) -> dict:
    rec = Detection2D(cid, frame, box, conf).to_json()
    if detection is not None:
        rec["detection"] = detection
    return rec


def load_masks(cfg: PipelineConfig, rig: Mapping[int, CameraModel], frame: int) -> dict:
    masks = {}
    for cid in rig:
        p = label_path(cfg.labels, cid, frame)
        if not p.exists():
            raise MissingMask(cid, frame)
        masks[cid] = pedestrian_mask(read_label_map(p, cid, frame), cfg.person_classes)
    return masks


def detect_frame(cfg: PipelineConfig, rig: Mapping[int, CameraModel], frame: int,
                 dets: Sequence[Detection2D], aoi: AOI | None) -> FrameOutput:
    """Run the enabled stages on the detections of one frame."""
    out = FrameOutput(frame)
    st = cfg.stages
    if not st.filter:
        out.camera = [d.to_json() for d in dets]
        return out
    pdets = filter_by_aoi(project_detections(dets, rig), aoi)
    if not st.fuse:
        out.camera = [p.origin.to_json() for p in pdets]
        out.ground = [{"frame": frame, "camera_id": p.camera_id, "X": p.ground.X, "Y": p.ground.Y,
                       "confidence": p.confidence} for p in pdets]
        return out

    globals_ = [globalize(c, cfg.h0) for c in fuse(pdets, cfg.R1)]
    for m, g in enumerate(globals_):
        out.ground.append({
            "frame": frame, "detection": m, "X": g.ground.X, "Y": g.ground.Y, "height": g.height,
            "confidence": g.confidence,
            "members": [{"camera_id": p.camera_id, "X": p.ground.X, "Y": p.ground.Y,
                         "box": list(p.origin.box.as_tuple())} for p in g.members.members],
        })
    if not st.refine:
        for m, g in enumerate(globals_):
            for cid, cam in rig.items():
                sb = segment_box(cam, g.ground, g.height, cfg.optimizer.aspect)
                if sb is not None and box_visible(sb[1], cam):
                    out.camera.append(_box_record(frame, cid, sb[1], g.confidence, m))
        out.camera.sort(key=lambda r: (r["camera_id"], r["detection"]))
        return out

    masks = load_masks(cfg, rig, frame) if globals_ else {}
    res = optimize(globals_, masks, rig, cfg.optimizer, frame)
    out.diagnostics = [(frame, i, psi) for i, psi in enumerate(res.history)]
    for d in res.detections:
        per_cam = []
        for cid in rig:
            box = d.boxes[cid]
            per_cam.append({"camera_id": cid, "box": None if box is None else list(box.as_tuple()),
                            "base": [d.bases[cid].X, d.bases[cid].Y]})
            if box_visible(box, rig[cid]):
                out.camera.append(_box_record(frame, cid, box, d.confidence, d.index))
        c = d.ground
        out.refined.append({"frame": frame, "detection": d.index, "height": d.height, "confidence": d.confidence,
                            "anchor": [d.anchor.X, d.anchor.Y], "ground": [c.X, c.Y], "per_camera": per_cam})
    out.camera.sort(key=lambda r: (r["camera_id"], r["detection"]))
    return out


def run_detect(cfg: PipelineConfig) -> dict:
    rig = load_rig(cfg.rig)
    groups = load_detections(cfg.require("detections"), rig)
    frames = sorted({f for f, _ in groups}) if cfg.frames is None else sorted(cfg.frames)
    aoi = ensure_aoi(cfg, rig) if cfg.stages.filter else None
    per_frame: dict[int, list[Detection2D]] = defaultdict(list)
    for (f, _), dets in groups.items():
        per_frame[f].extend(dets)

    outputs = parallel_map(lambda f: detect_frame(cfg, rig, f, per_frame.get(f, []), aoi), frames, cfg.jobs)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "camera_detections.jsonl", (r for o in outputs for r in o.camera))
    write_jsonl(out / "ground_detections.jsonl", (r for o in outputs for r in o.ground))
    if cfg.stages.refine:
        write_jsonl(out / "refined.jsonl", (r for o in outputs for r in o.refined))
        with (out / "diagnostics.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame", "iter", "psi"])
            for o in outputs:
                for frame, it, psi in o.diagnostics:
                    w.writerow([frame, it, repr(psi)])
    return {"frames": len(frames), "camera_detections": sum(len(o.camera) for o in outputs),
            "ground_detections": sum(len(o.ground) for o in outputs)}


# -- eval ---------------------------------------------------------------------


def _load_gt_boxes(path) -> dict[tuple[int, int], list[BoundingBox2D]]:
    gts: dict[tuple[int, int], list[BoundingBox2D]] = defaultdict(list)
    for lineno, rec in read_jsonl(path):
        try:
            d = parse_detection(rec, require_confidence=False)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad ground-truth record: {exc}", str(path), lineno) from exc
        gts[(d.frame, d.camera_id)].append(d.box)
    return gts


def _load_points(path, need_confidence: bool) -> dict[int, list[tuple[GroundPoint, float]]]:
    pts: dict[int, list] = defaultdict(list)
    for lineno, rec in read_jsonl(path):
        try:
            conf = float(rec["confidence"]) if need_confidence else 1.0
            pts[int(rec["frame"])].append((GroundPoint(float(rec["X"]), float(rec["Y"])), conf))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad ground-plane record: {exc}", str(path), lineno) from exc
    return pts


def box_units(dets, gts, rig: Mapping[int, CameraModel], frames: Iterable[int] | None = None) -> dict[int, list]:
    """Per-camera evaluation units ``(boxes, confidences, gt_boxes)``, one per frame.

    Detections are clipped to the image; those falling fully outside are dropped.
    """
    keys = set(dets) | set(gts)
    if frames is not None:
        wanted = set(frames)
        keys = {k for k in keys if k[0] in wanted}
    units: dict[int, list] = {cid: [] for cid in rig}
    for frame, cid in sorted(keys):
        if cid not in rig:
            raise UnknownCamera(f"camera {cid} is not in the rig")
        cam = rig[cid]
        boxes, confs = [], []
        for d in dets.get((frame, cid), []):
            b = d.box.clipped(cam.width, cam.height)
            if b is not None:
                boxes.append(b)
                confs.append(d.confidence)
        units[cid].append((boxes, confs, list(gts.get((frame, cid), []))))
    return units


def run_eval(cfg: PipelineConfig) -> dict:
    rig = load_rig(cfg.rig)
    gt_path = cfg.require("ground_truth")
    out = cfg.out
    point_mode = cfg.gt_modality == "points"
    curves = {}
    per_cam_best: dict = {}
    per_cam_all: dict = {}
    if point_mode:
        dets = _load_points(out / "ground_detections.jsonl", True)
        gts = _load_points(gt_path, False)
        frames = sorted(set(dets) | set(gts)) if cfg.frames is None else sorted(cfg.frames)
        units = [([p for p, _ in dets.get(f, [])], [c for _, c in dets.get(f, [])],
                  [p for p, _ in gts.get(f, [])]) for f in frames]

        def match(d, c, g):
            return match_points(d, c, g, cfg.radius)

        per_cam_best["ground"] = evaluate_units(units, match, "best_f")
        per_cam_all["ground"] = evaluate_units(units, match, "all")
        curves["ground"] = pr_curve(units, match)
        criterion = {"radius": cfg.radius}
    else:
        dets = load_detections(out / "camera_detections.jsonl", rig)
        gts = _load_gt_boxes(gt_path)
        units_by_cam = box_units(dets, gts, rig, cfg.frames)

        def match(d, c, g):
            return match_boxes(d, c, g, cfg.iou_threshold)

        for cid, units in units_by_cam.items():
            if sum(len(g) for _, _, g in units) == 0:
                continue
            per_cam_best[cid] = evaluate_units(units, match, "best_f")
            per_cam_all[cid] = evaluate_units(units, match, "all")
            curves[cid] = pr_curve(units, match)
        criterion = {"iou_threshold": cfg.iou_threshold}

    report = {
        "modality": cfg.gt_modality,
        "criterion": criterion,
        "operating_point": "best_f",
        "per_camera": {str(k): m.to_json() for k, m in per_cam_best.items()},
        "average": average_metrics(per_cam_best),
        "all_detections": {
            "per_camera": {str(k): m.to_json() for k, m in per_cam_all.items()},
            "average": average_metrics(per_cam_all),
        },
    }
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", report)
    with (out / "pr_curve.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["camera", "threshold", "precision", "recall", "f_score"])
        for k, c in curves.items():
            for t, p, r, f in zip(c.thresholds, c.precision, c.recall, c.f_score):
                w.writerow([k, repr(t), repr(p), repr(r), repr(f)])
    return report


def format_report(report: dict) -> str:
    cols = ("precision", "recall", "f_score", "auc", "n_moda", "n_modp")
    head = f"{'camera':>8} " + " ".join(f"{c:>9}" for c in cols) + f" {'threshold':>9}"
    lines = [f"modality: {report['modality']}  criterion: {report['criterion']}", head]
    for k, m in report["per_camera"].items():
        t = "-" if m["threshold"] is None else f"{m['threshold']:.4f}"
        lines.append(f"{k:>8} " + " ".join(f"{m[c]:9.4f}" for c in cols) + f" {t:>9}")
    avg = report["average"]
    lines.append(f"{'average':>8} " + " ".join(f"{avg[c]:9.4f}" for c in cols))
    return "\n".join(lines)
