"""Overlay images: per-camera boxes over label maps, and a ground-plane map."""

from __future__ import annotations

import colorsys
import math
from collections import defaultdict

import numpy as np
from PIL import Image, ImageDraw

from .config import PipelineConfig
from .geometry import BoundingBox2D, CameraModel
from .io import discover_frames, label_path, load_aoi, load_rig, read_jsonl
from .pipeline import aoi_paths

MAP_SCALE = 4  # pixels per grid cell on the ground map


def palette(i: int) -> tuple[int, int, int]:
    """Colour of global detection ``i``; golden-ratio hue spacing keeps neighbours apart."""
    r, g, b = colorsys.hsv_to_rgb((i * 0.6180339887498949) % 1.0, 0.9, 1.0)
    return int(round(r * 255)), int(round(g * 255)), int(round(b * 255))


def pixel_rect(box: BoundingBox2D, width: int, height: int) -> tuple[int, int, int, int] | None:
    """Inclusive pixel rectangle covered by ``box`` after clipping to the image."""
    b = box.clipped(width, height)
    if b is None:
        return None
    x0, y0 = int(math.floor(b.x_min)), int(math.floor(b.y_min))
    x1 = min(width - 1, max(x0, int(math.ceil(b.x_max)) - 1))
    y1 = min(height - 1, max(y0, int(math.ceil(b.y_max)) - 1))
    return x0, y0, x1, y1


def _backdrop(cfg: PipelineConfig, cam: CameraModel, frame: int) -> Image.Image:
    p = label_path(cfg.labels, cam.camera_id, frame)
    if not p.exists():
        return Image.new("RGB", (cam.width, cam.height))
    with Image.open(p) as im:
        lab = np.array(im)
    gray = np.full(lab.shape, 50, dtype=np.uint8)
    gray[np.isin(lab, cfg.ground_classes)] = 110
    gray[np.isin(lab, cfg.person_classes)] = 170
    return Image.fromarray(gray, mode="L").convert("RGB")


def draw_boxes(img: Image.Image, records, width: int = 2) -> Image.Image:
    draw = ImageDraw.Draw(img)
    for i, rec in enumerate(records):
        box = BoundingBox2D(rec["x_min"], rec["y_min"], rec["x_max"], rec["y_max"])
        r = pixel_rect(box, img.width, img.height)
        if r is None:
            continue
        color = palette(rec["detection"]) if "detection" in rec else palette(i)
        draw.rectangle(r, outline=color, width=width)
    return img


def ground_map(aoi, points) -> Image.Image:
    """AOI in grey with detections as coloured squares; up in the image is +Y."""
    grid = aoi.grid
    base = np.where(aoi.inside, 120, 30).astype(np.uint8)[::-1]
    img = Image.fromarray(base, mode="L").convert("RGB")
    img = img.resize((grid.cols * MAP_SCALE, grid.rows * MAP_SCALE), Image.NEAREST)
    draw = ImageDraw.Draw(img)
    for i, rec in enumerate(points):
        c = (rec["X"] - grid.origin[0]) / grid.cell_size * MAP_SCALE
        r = (grid.rows - (rec["Y"] - grid.origin[1]) / grid.cell_size) * MAP_SCALE
        color = palette(rec["detection"]) if "detection" in rec else palette(i)
        draw.rectangle((int(c) - 3, int(r) - 3, int(c) + 3, int(r) + 3), fill=color)
    return img


def run_render(cfg: PipelineConfig) -> dict:
    rig = load_rig(cfg.rig)
    out = cfg.out
    cam_recs: dict[tuple[int, int], list] = defaultdict(list)
    path = out / "camera_detections.jsonl"
    if path.exists():
        for _, rec in read_jsonl(path):
            cam_recs[(int(rec["frame"]), int(rec["camera_id"]))].append(rec)
    ground: dict[int, list] = defaultdict(list)
    gpath = out / "ground_detections.jsonl"
    if gpath.exists():
        for _, rec in read_jsonl(gpath):
            ground[int(rec["frame"])].append(rec)
    if cfg.frames is None:
        frames = {f for f, _ in cam_recs} | set(ground)
        for cid in rig:
            frames.update(discover_frames(cfg.labels, cid))
        frames = sorted(frames)
    else:
        frames = sorted(cfg.frames)

    rdir = out / "render"
    n_images = 0
    for frame in frames:
        for cid, cam in rig.items():
            img = draw_boxes(_backdrop(cfg, cam, frame), cam_recs.get((frame, cid), []))
            p = rdir / f"cam{cid}" / f"{frame:06}.png"
            p.parent.mkdir(parents=True, exist_ok=True)
            img.save(p)
            n_images += 1
    mask, header = aoi_paths(cfg)
    if mask.exists() and header.exists():
        aoi = load_aoi(mask, header)
        for frame in frames:
            rdir.mkdir(parents=True, exist_ok=True)
            ground_map(aoi, ground.get(frame, [])).save(rdir / f"ground_{frame:06}.png")
            n_images += 1
    return {"images": n_images, "frames": len(frames)}
