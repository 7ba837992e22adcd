"""Ground-plane semantic loci and the automatically derived area of interest.

A label map is projected pixel by pixel onto a discretised ground plane
(:class:`GroundGrid`). Each camera's projection is a :class:`Locus`; loci are
completed by nearest-neighbour fill, smoothed over time by a per-cell mode,
and finally united over cameras, keeping only ground-related classes, to form
the :class:`AOI`.

All ties (mode or nearest neighbour) break towards the lowest class index and
then the lowest row-major cell index, which keeps results independent of
input order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateCamera, EmptyGroundClassSet, EmptyLocus, GridMismatch
from .geometry import CameraModel, GroundPoint, Homography, ground_homography, pixels_to_ground

N_CLASSES = 150
INVALID = -1


@dataclass(frozen=True)
class GroundGrid:
    """Regular grid over the ground plane; cell ``(r, c)`` spans
    ``[X0 + c*s, X0 + (c+1)*s) x [Y0 + r*s, Y0 + (r+1)*s)``."""

    origin: GroundPoint
    cell_size: float
    cols: int
    rows: int

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        if self.cols <= 0 or self.rows <= 0:
            raise ValueError("grid must have at least one cell")
        object.__setattr__(self, "origin", GroundPoint(float(self.origin[0]), float(self.origin[1])))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def size(self) -> int:
        return self.rows * self.cols

    @classmethod
    def from_bounds(cls, x_min: float, y_min: float, x_max: float, y_max: float,
                    cell_size: float, padding: float = 0.0) -> "GroundGrid":
        x0, y0 = x_min - padding, y_min - padding
        cols = max(1, int(math.ceil((x_max + padding - x0) / cell_size)))
        rows = max(1, int(math.ceil((y_max + padding - y0) / cell_size)))
        return cls(GroundPoint(x0, y0), cell_size, cols, rows)

    def cell_index(self, XY: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Floor-division binning of (N, 2) ground points -> (row, col, inside)."""
        XY = np.asarray(XY, dtype=float).reshape(-1, 2)
        with np.errstate(invalid="ignore"):
            c = np.floor((XY[:, 0] - self.origin.X) / self.cell_size)
            r = np.floor((XY[:, 1] - self.origin.Y) / self.cell_size)
        inside = (c >= 0) & (c < self.cols) & (r >= 0) & (r < self.rows)
        r = np.where(inside, r, -1).astype(np.int64)
        c = np.where(inside, c, -1).astype(np.int64)
        return r, c, inside

    def cell_centers(self) -> np.ndarray:
        """(rows, cols, 2) array of cell-centre coordinates."""
        xs = self.origin.X + (np.arange(self.cols) + 0.5) * self.cell_size
        ys = self.origin.Y + (np.arange(self.rows) + 0.5) * self.cell_size
        X, Y = np.meshgrid(xs, ys)
        return np.stack([X, Y], axis=-1)

    def to_json(self) -> dict:
        return {"origin": [self.origin.X, self.origin.Y], "cell_size": self.cell_size,
                "cols": self.cols, "rows": self.rows}

    @classmethod
    def from_json(cls, d: dict) -> "GroundGrid":
        return cls(GroundPoint(*d["origin"]), float(d["cell_size"]), int(d["cols"]), int(d["rows"]))


@dataclass(frozen=True, eq=False)
class LabelMap:
    camera_id: int
    frame: int
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValueError("label map must be a 2-D raster")
        if labels.size and (labels.min() < 0 or labels.max() >= N_CLASSES):
            raise ValueError(f"class indices must lie in [0, {N_CLASSES - 1}]")
        object.__setattr__(self, "labels", labels.astype(np.uint8, copy=False))

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True, eq=False)
class Locus:
    """Per-cell class labels on a grid; ``label`` is -1 where ``valid`` is False."""

    grid: GroundGrid
    label: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if self.label.shape != self.grid.shape or self.valid.shape != self.grid.shape:
            raise GridMismatch("locus arrays do not match the grid shape")

    def __eq__(self, other):
        if not isinstance(other, Locus):
            return NotImplemented
        return (self.grid == other.grid and np.array_equal(self.valid, other.valid)
                and np.array_equal(self.label, other.label))

    __hash__ = None


SmoothedLocus = Locus


@dataclass(frozen=True, eq=False)
class AOI:
    grid: GroundGrid
    inside: np.ndarray

    @property
    def area(self) -> float:
        return float(self.inside.sum()) * self.grid.cell_size ** 2


def _mode_per_cell(cells: np.ndarray, labels: np.ndarray, n_cells: int) -> np.ndarray:
    """Mode label per flat cell index; -1 for cells without samples.

    Ties go to the lowest label.
    """
    out = np.full(n_cells, INVALID, dtype=np.int16)
    if cells.size == 0:
        return out
    keys = cells.astype(np.int64) * N_CLASSES + labels.astype(np.int64)
    uniq, counts = np.unique(keys, return_counts=True)
    ucell = uniq // N_CLASSES
    ulab = uniq % N_CLASSES
    order = np.lexsort((ulab, -counts, ucell))
    ucell, ulab = ucell[order], ulab[order]
    first = np.ones(len(ucell), dtype=bool)
    first[1:] = ucell[1:] != ucell[:-1]
    out[ucell[first]] = ulab[first]
    return out


def pixel_centers(width: int, height: int) -> np.ndarray:
    u, v = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
    return np.stack([u.ravel(), v.ravel()], axis=1)


def project_locus(label_map: LabelMap, H: Homography | np.ndarray, grid: GroundGrid,
                  front_sign: float | None = None) -> Locus:
    """Project every pixel centre of ``label_map`` through ``H`` and bin it.

    ``front_sign`` (see :func:`ground_front_sign`) discards pixels whose ray
    meets the ground behind the camera; without it only points at infinity
    are dropped.
    """
    xy = pixel_centers(label_map.width, label_map.height)
    Hm = H.H if isinstance(H, Homography) else np.asarray(H, dtype=float)
    ground, ok = pixels_to_ground(Hm, xy)
    if front_sign is not None:
        w = xy @ Hm[2, :2] + Hm[2, 2]
        ok &= w * front_sign > 0
    r, c, inside = grid.cell_index(np.where(ok[:, None], ground, np.nan))
    inside &= ok
    if not inside.any():
        raise EmptyLocus(f"camera {label_map.camera_id}, frame {label_map.frame}: "
                         "no pixel lands inside the grid window")
    flat = r[inside] * grid.cols + c[inside]
    modes = _mode_per_cell(flat, label_map.labels.ravel()[inside], grid.size)
    label = modes.reshape(grid.shape)
    return Locus(grid, label, label >= 0)


def ground_front_sign(cam: CameraModel) -> float | None:
    """Sign s such that pixel p sees the ground in front of ``cam`` iff
    ``s * (H p)_w > 0`` for the camera's effective homography."""
    try:
        derived = ground_homography(cam).H
    except DegenerateCamera:
        return None
    sign = cam.depth_sign
    if cam.H is not None:
        ratio = float(np.sum(cam.H.H * derived))
        if ratio == 0.0:
            return None
        sign *= math.copysign(1.0, ratio)
    return sign


def _hull(points: np.ndarray) -> np.ndarray:
    """Exact convex hull (monotone chain) of integer points, CCW, no collinear vertices."""
    pts = sorted(set(map(tuple, points.tolist())))
    if len(pts) <= 2:
        return np.array(pts, dtype=np.int64)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=np.int64)


def _in_hull(hull: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Inclusive point-in-convex-hull test on integer coordinates."""
    if len(hull) == 1:
        return np.all(q == hull[0], axis=1)
    if len(hull) == 2:
        a, b = hull
        d = b - a
        rel = q - a
        cr = d[0] * rel[:, 1] - d[1] * rel[:, 0]
        dot = rel @ d
        return (cr == 0) & (dot >= 0) & (dot <= d @ d)
    inside = np.ones(len(q), dtype=bool)
    for i in range(len(hull)):
        a, b = hull[i], hull[(i + 1) % len(hull)]
        d = b - a
        rel = q - a
        inside &= d[0] * rel[:, 1] - d[1] * rel[:, 0] >= 0
    return inside


def fill_locus(locus: Locus) -> Locus:
    """Nearest-neighbour completion of invalid cells inside the convex hull of valid ones."""
    grid = locus.grid
    vr, vc = np.nonzero(locus.valid)
    if vr.size == 0:
        raise EmptyLocus("locus has no valid cell")
    # the hull of all valid cells equals the hull of each row's extreme cells
    rows_u, start = np.unique(vr, return_index=True)
    end = np.r_[start[1:], vr.size] - 1
    extremes = np.concatenate([np.stack([rows_u, vc[start]], 1), np.stack([rows_u, vc[end]], 1)])
    hull = _hull(extremes)

    r0, r1, c0, c1 = vr.min(), vr.max(), vc.min(), vc.max()
    sub_invalid = ~locus.valid[r0:r1 + 1, c0:c1 + 1]
    qr, qc = np.nonzero(sub_invalid)
    qr += r0
    qc += c0
    q = np.stack([qr, qc], axis=1)
    targets = q[_in_hull(hull, q)] if len(q) else q
    label = locus.label.copy()
    if len(targets) == 0:
        return Locus(grid, label, locus.valid.copy())

    src = np.stack([vr, vc], axis=1)
    src_lab = locus.label[vr, vc].astype(np.int64)
    src_flat = vr.astype(np.int64) * grid.cols + vc
    tree = cKDTree(src)
    k = min(8, len(src))
    _, idx = tree.query(targets, k=k)
    idx = idx.reshape(len(targets), k)
    diff = src[idx] - targets[:, None, :]
    d2 = np.einsum("nkj,nkj->nk", diff, diff)
    best = d2.min(axis=1)
    tie = d2 == best[:, None]
    # composite key: label first, then row-major index of the source cell
    key = np.where(tie, src_lab[idx] * grid.size + src_flat[idx], np.iinfo(np.int64).max)
    choice = idx[np.arange(len(targets)), key.argmin(axis=1)]
    new_lab = src_lab[choice]

    overflow = np.nonzero(tie[:, -1] & (k < len(src)))[0]
    for i in overflow:
        cand = np.asarray(tree.query_ball_point(targets[i], math.sqrt(best[i]) + 1e-6), dtype=np.int64)
        dd = np.sum((src[cand] - targets[i]) ** 2, axis=1)
        cand = cand[dd == best[i]]
        kk = src_lab[cand] * grid.size + src_flat[cand]
        new_lab[i] = src_lab[cand[kk.argmin()]]

    label[targets[:, 0], targets[:, 1]] = new_lab
    return Locus(grid, label, label >= 0)


def temporal_mode(loci: Sequence[Locus]) -> Locus:
    """Per-cell mode of labels across frames (only frames where the cell is valid count)."""
    loci = list(loci)
    if not loci:
        raise ValueError("temporal_mode needs at least one locus")
    grid = loci[0].grid
    cells, labels = [], []
    for loc in loci:
        if loc.grid != grid:
            raise GridMismatch("loci do not share one grid")
        flat = np.flatnonzero(loc.valid)
        cells.append(flat)
        labels.append(loc.label.ravel()[flat])
    modes = _mode_per_cell(np.concatenate(cells), np.concatenate(labels), grid.size)
    label = modes.reshape(grid.shape)
    return Locus(grid, label, label >= 0)


def build_aoi(smoothed: Iterable[Locus], ground_classes: Iterable[int]) -> AOI:
    ground = np.array(sorted(set(int(c) for c in ground_classes)), dtype=np.int64)
    if ground.size == 0:
        raise EmptyGroundClassSet("ground class set is empty")
    smoothed = list(smoothed)
    if not smoothed:
        raise ValueError("build_aoi needs at least one locus")
    grid = smoothed[0].grid
    inside = np.zeros(grid.shape, dtype=bool)
    for loc in smoothed:
        if loc.grid != grid:
            raise GridMismatch("loci do not share one grid")
        inside |= loc.valid & np.isin(loc.label, ground)
    return AOI(grid, inside)


def aoi_contains(aoi: AOI, p: GroundPoint) -> bool:
    return bool(aoi_contains_many(aoi, np.array([p], dtype=float))[0])


def aoi_contains_many(aoi: AOI, XY: np.ndarray) -> np.ndarray:
    r, c, inside = aoi.grid.cell_index(XY)
    out = np.zeros(len(r), dtype=bool)
    out[inside] = aoi.inside[r[inside], c[inside]]
    return out


def fit_grid(cameras: Iterable[CameraModel], cell_size: float = 0.05, padding: float = 1.0,
             max_range: float = 30.0, stride: int = 4) -> GroundGrid:
    """Grid window covering every camera's ground footprint.

    Pixels are sampled every ``stride`` pixels; ground points further than
    ``max_range`` from the camera's nadir are ignored since pixels near the
    horizon would otherwise stretch the window without bound.
    """
    lo = np.array([np.inf, np.inf])
    hi = -lo
    for cam in cameras:
        u = np.arange(0, cam.width, stride) + 0.5
        v = np.arange(0, cam.height, stride) + 0.5
        uu, vv = np.meshgrid(np.r_[u, cam.width - 0.5], np.r_[v, cam.height - 0.5])
        xy = np.stack([uu.ravel(), vv.ravel()], axis=1)
        H = cam.homography
        ground, ok = pixels_to_ground(H, xy)
        sign = ground_front_sign(cam)
        if sign is not None:
            w = xy @ H.H[2, :2] + H.H[2, 2]
            ok &= w * sign > 0
        nadir = cam.center[:2]
        with np.errstate(invalid="ignore"):
            ok &= np.hypot(ground[:, 0] - nadir[0], ground[:, 1] - nadir[1]) <= max_range
        if ok.any():
            lo = np.minimum(lo, ground[ok].min(axis=0))
            hi = np.maximum(hi, ground[ok].max(axis=0))
    if not np.all(np.isfinite(lo)):
        raise EmptyLocus("no camera sees the ground plane within range")
    return GroundGrid.from_bounds(lo[0], lo[1], hi[0], hi[1], cell_size, padding)


def camera_locus(label_map: LabelMap, cam: CameraModel, grid: GroundGrid) -> Locus:
    """Projected and filled locus of one camera frame."""
    return fill_locus(project_locus(label_map, cam.homography, grid, ground_front_sign(cam)))
