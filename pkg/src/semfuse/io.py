"""File formats: rig JSON, JSON Lines records, label rasters and AOI masks."""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from PIL import Image

from .errors import ParseError
from .geometry import CameraModel, Homography
from .semantics import AOI, GroundGrid, LabelMap

Rig = dict  # camera_id -> CameraModel, ordered by camera_id


def load_rig(path) -> dict[int, CameraModel]:
    path = Path(path)
    try:
        records = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read rig file: {exc}", str(path)) from exc
    if not isinstance(records, list):
        raise ParseError("rig file must hold a JSON array of cameras", str(path))
    rig: dict[int, CameraModel] = {}
    for i, rec in enumerate(records):
        try:
            cid = int(rec["camera_id"])
            H = Homography(np.array(rec["H"], dtype=float)) if rec.get("H") is not None else None
            cam = CameraModel(cid, np.array(rec["P"], dtype=float), int(rec["width"]), int(rec["height"]), H)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"camera entry {i}: {exc}", str(path)) from exc
        if cid in rig:
            raise ParseError(f"duplicate camera_id {cid}", str(path))
        rig[cid] = cam
    return dict(sorted(rig.items()))


def rig_to_json(rig: dict[int, CameraModel]) -> list[dict]:
    out = []
    for cid, cam in sorted(rig.items()):
        rec = {"camera_id": cid, "P": cam.P.tolist(), "width": cam.width, "height": cam.height}
        if cam.H is not None:
            rec["H"] = cam.H.H.tolist()
        out.append(rec)
    return out


def save_rig(rig: dict[int, CameraModel], path) -> None:
    write_json(path, rig_to_json(rig))


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def read_jsonl(path) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, record)`` for every non-blank line."""
    path = Path(path)
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", str(path), lineno) from exc
            if not isinstance(rec, dict):
                raise ParseError("each line must be a JSON object", str(path), lineno)
            yield lineno, rec


def write_jsonl(path, records: Iterable[dict]) -> None:
    with Path(path).open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


# -- rasters ------------------------------------------------------------------


def read_label_map(path, camera_id: int, frame: int) -> LabelMap:
    with Image.open(path) as im:
        if im.mode not in ("L", "P", "I", "I;16"):
            im = im.convert("L")
        arr = np.array(im)
    return LabelMap(camera_id, frame, arr)


def write_label_map(path, labels: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(labels, dtype=np.uint8), mode="L").save(path)


def label_path(template: str, camera_id: int, frame: int, root=None) -> Path:
    p = Path(template.format(camera_id=camera_id, frame=frame))
    return p if root is None or p.is_absolute() else Path(root) / p


def discover_frames(template: str, camera_id: int, root=None) -> list[int]:
    """Frames for which a label map exists, found by matching the path template."""
    filled = template.replace("{camera_id}", str(camera_id))
    glob_pat = re.sub(r"\{frame(?::[^}]*)?\}", "*", filled)
    rx = re.compile(re.sub(r"\\\{frame(?::[^}]*)?\\\}", r"(\\d+)", re.escape(filled)) + "$")
    base = Path(root) if root is not None else Path(".")
    if Path(glob_pat).is_absolute():
        base, glob_pat = Path("/"), glob_pat.lstrip("/")
    frames = set()
    for p in base.glob(glob_pat):
        m = rx.search(p.as_posix())
        if m:
            frames.add(int(m.group(1)))
    return sorted(frames)


def save_aoi(aoi: AOI, mask_path, header_path) -> None:
    """PGM mask (255 inside) with grid row 0 at the lowest Y, plus a JSON grid header."""
    Path(mask_path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(aoi.inside, 255, 0).astype(np.uint8), mode="L").save(mask_path, format="PPM")
    write_json(header_path, aoi.grid.to_json())


def load_aoi(mask_path, header_path) -> AOI:
    grid = GroundGrid.from_json(json.loads(Path(header_path).read_text()))
    with Image.open(mask_path) as im:
        arr = np.array(im)
    if arr.shape != grid.shape:
        raise ParseError(f"AOI mask shape {arr.shape} does not match header {grid.shape}", str(mask_path))
    return AOI(grid, arr > 127)
