"""Run configuration: one JSON document, dotted ``key=value`` overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

from .errors import ConfigError, EmptyGroundClassSet
from .fusion import DEFAULT_HEIGHT, DEFAULT_R1
from .refine import OptimizerConfig

# ADE20K (0-indexed) classes a pedestrian can stand on
DEFAULT_GROUND_CLASSES = (3, 6, 9, 11, 13, 29, 52)
DEFAULT_PERSON_CLASSES = (12,)
MODALITIES = ("boxes", "points")


@dataclass(frozen=True)
class GridConfig:
    cell_size: float = 0.05
    padding: float = 1.0
    origin: tuple[float, float] | None = None
    cols: int | None = None
    rows: int | None = None
    max_range: float = 30.0

    @property
    def explicit(self) -> bool:
        return self.origin is not None and self.cols is not None and self.rows is not None


@dataclass(frozen=True)
class Stages:
    filter: bool = True
    fuse: bool = True
    refine: bool = True

    def validate(self):
        if self.refine and not self.fuse:
            raise ConfigError("stage 'refine' requires 'fuse'")
        if self.fuse and not self.filter:
            raise ConfigError("stage 'fuse' requires 'filter'")


@dataclass(frozen=True)
class PipelineConfig:
    root: Path
    rig: Path
    labels: str
    detections: Path | None = None
    ground_truth: Path | None = None
    gt_modality: str = "boxes"
    ground_classes: tuple[int, ...] = DEFAULT_GROUND_CLASSES
    person_classes: tuple[int, ...] = DEFAULT_PERSON_CLASSES
    grid: GridConfig = field(default_factory=GridConfig)
    frames: tuple[int, ...] | None = None
    temporal_window: int | None = None
    R1: float = DEFAULT_R1
    h0: float = DEFAULT_HEIGHT
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    output_dir: Path = Path("out")
    stages: Stages = field(default_factory=Stages)
    iou_threshold: float = 0.5
    radius: float = 0.5
    jobs: int = 1

    @property
    def out(self) -> Path:
        return self.output_dir

    def require(self, name: str) -> Path:
        p = getattr(self, name)
        if p is None:
            raise ConfigError(f"config field '{name}' is required for this command")
        return p


def parse_value(text: str) -> Any:
    """JSON when it parses, the raw string otherwise."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides: Sequence[str]) -> dict:
    raw = copy.deepcopy(raw)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override '{key}': '{p}' is not a section")
            node = nxt
        node[parts[-1]] = parse_value(value)
    return raw


def _section(cls, raw: Any, name: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"'{name}' must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{name}': {', '.join(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{name}': {exc}") from exc


def _classes(raw: Any, name: str) -> tuple[int, ...]:
    if not isinstance(raw, (list, tuple)) or not all(isinstance(c, int) and not isinstance(c, bool) for c in raw):
        raise ConfigError(f"'{name}' must be an array of integers")
    return tuple(raw)


def from_dict(raw: dict, root: Path) -> PipelineConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(PipelineConfig)} - {"root"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    for key in ("rig", "labels"):
        if key not in raw:
            raise ConfigError(f"config field '{key}' is required")

    def path(key):
        v = raw.get(key)
        if v is None:
            return None
        p = Path(v)
        return p if p.is_absolute() else root / p

    labels = str(raw["labels"])
    if not Path(labels).is_absolute():
        labels = str(root / labels)
    modality = raw.get("gt_modality", "boxes")
    if modality not in MODALITIES:
        raise ConfigError(f"gt_modality must be one of {MODALITIES}, got {modality!r}")
    ground = _classes(raw.get("ground_classes", list(DEFAULT_GROUND_CLASSES)), "ground_classes")
    if not ground:
        raise EmptyGroundClassSet("ground_classes is empty")
    grid_raw = raw.get("grid")
    if isinstance(grid_raw, dict) and grid_raw.get("origin") is not None:
        grid_raw = {**grid_raw, "origin": tuple(float(x) for x in grid_raw["origin"])}
    frames = raw.get("frames")
    try:
        cfg = PipelineConfig(
            root=root,
            rig=path("rig"),
            labels=labels,
            detections=path("detections"),
            ground_truth=path("ground_truth"),
            gt_modality=modality,
            ground_classes=ground,
            person_classes=_classes(raw.get("person_classes", list(DEFAULT_PERSON_CLASSES)), "person_classes"),
            grid=_section(GridConfig, grid_raw, "grid"),
            frames=None if frames is None else tuple(int(f) for f in frames),
            temporal_window=raw.get("temporal_window"),
            R1=float(raw.get("R1", DEFAULT_R1)),
            h0=float(raw.get("h0", DEFAULT_HEIGHT)),
            optimizer=_section(OptimizerConfig, raw.get("optimizer"), "optimizer"),
            output_dir=path("output_dir") if raw.get("output_dir") is not None else root / "out",
            stages=_section(Stages, raw.get("stages"), "stages"),
            iou_threshold=float(raw.get("iou_threshold", 0.5)),
            radius=float(raw.get("radius", 0.5)),
            jobs=int(raw.get("jobs", 1)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    cfg.stages.validate()
    if cfg.R1 < 0 or not cfg.h0 > 0 or not cfg.radius > 0 or not 0 < cfg.iou_threshold <= 1:
        raise ConfigError("R1 must be >= 0; h0 and radius > 0; iou_threshold in (0, 1]")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be at least 1")
    if cfg.temporal_window is not None and (not isinstance(cfg.temporal_window, int) or cfg.temporal_window < 1):
        raise ConfigError("temporal_window must be a positive integer")
    return cfg


def load_config(path, overrides: Sequence[str] = ()) -> PipelineConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return from_dict(apply_overrides(raw, overrides), path.resolve().parent)
