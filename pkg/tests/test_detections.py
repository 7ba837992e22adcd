from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semfuse.detections import Detection2D, ProjectedDetection, filter_by_aoi, load_detections, project_detections
from semfuse.errors import ParseError, UnknownCamera
from semfuse.geometry import BoundingBox2D, CameraModel, GroundPoint, Homography, ground_homography
from semfuse.semantics import AOI, GroundGrid, aoi_contains

from scenes import planted_scene


def identity_rig(*ids):
    P = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]])
    return {i: CameraModel(i, P, 640, 480, Homography(np.eye(3))) for i in ids}


def write_records(path, recs):
    path.write_text("".join(json.dumps(r) + "\n" for r in recs))
    return path


def rec(frame, cam, box=(10, 10, 30, 70), conf=0.9):
    return {"frame": frame, "camera_id": cam, "x_min": box[0], "y_min": box[1], "x_max": box[2], "y_max": box[3],
            "confidence": conf}


def test_load_empty(tmp_path):
    assert load_detections(write_records(tmp_path / "d.jsonl", [])) == {}


def test_load_single(tmp_path):
    groups = load_detections(write_records(tmp_path / "d.jsonl", [rec(0, 1)]))
    assert list(groups) == [(0, 1)]
    d = groups[(0, 1)][0]
    assert d.box.as_tuple() == (10, 10, 30, 70) and d.confidence == 0.9


def test_grouping_counts(tmp_path):
    rng = np.random.default_rng(0)
    recs = [rec(int(rng.integers(0, 2)), int(rng.integers(1, 4))) for _ in range(12)]
    groups = load_detections(write_records(tmp_path / "d.jsonl", recs), identity_rig(1, 2, 3))
    expected = {}
    for r in recs:
        expected[(r["frame"], r["camera_id"])] = expected.get((r["frame"], r["camera_id"]), 0) + 1
    assert {k: len(v) for k, v in groups.items()} == expected
    assert sum(len(v) for v in groups.values()) == 12


def test_unknown_camera(tmp_path):
    with pytest.raises(UnknownCamera):
        load_detections(write_records(tmp_path / "d.jsonl", [rec(0, 7)]), identity_rig(1))


def test_parse_error_names_line(tmp_path):
    p = write_records(tmp_path / "d.jsonl", [rec(0, 1), {"frame": 0, "camera_id": 1}])
    with pytest.raises(ParseError) as e:
        load_detections(p)
    assert e.value.line == 2


def test_invalid_confidence(tmp_path):
    with pytest.raises(ParseError):
        load_detections(write_records(tmp_path / "d.jsonl", [rec(0, 1, conf=1.5)]))


def test_identity_projection():
    pd = project_detections([Detection2D(1, 0, BoundingBox2D(0, 0, 10, 20))], identity_rig(1))
    assert pd[0].ground == (5, 20)


def test_identical_cameras_identical_points():
    b = BoundingBox2D(3, 4, 9, 30)
    pd = project_detections([Detection2D(1, 0, b), Detection2D(2, 0, b)], identity_rig(1, 2))
    assert pd[0].ground == pd[1].ground


def test_synthetic_detections_land_on_planted_positions(noiseless_scene):
    dets = [Detection2D(d["camera_id"], d["frame"],
                        BoundingBox2D(d["x_min"], d["y_min"], d["x_max"], d["y_max"]), d["confidence"])
            for d in noiseless_scene.detections]
    peds = noiseless_scene.spec.pedestrians
    pd = project_detections(dets, noiseless_scene.rig)
    assert len(pd) == len(dets)
    for p in pd:
        err = min(math.hypot(p.ground.X - q.X, p.ground.Y - q.Y) for q in peds)
        assert err < 1e-6


def test_foot_behind_camera_is_dropped():
    scene = planted_scene()
    cam = scene.rig[1]
    # a box whose foot lies above the horizon line
    H = ground_homography(cam).H
    v_h = -H[2, 0] * 320 / H[2, 1] - H[2, 2] / H[2, 1]
    pd = project_detections([Detection2D(1, 0, BoundingBox2D(300, v_h - 40, 340, v_h - 5))], scene.rig)
    assert pd == []


def full_aoi(value):
    grid = GroundGrid(GroundPoint(-50.0, -50.0), 1.0, 100, 100)
    return AOI(grid, np.full(grid.shape, value))


def pdet(X, Y, cam=1, conf=1.0):
    return ProjectedDetection(Detection2D(cam, 0, BoundingBox2D(0, 0, 1, 1), conf), GroundPoint(X, Y))


def test_filter_everything_and_nothing():
    pds = [pdet(0.5, 0.5), pdet(-3, 2), pdet(10, 10)]
    assert filter_by_aoi(pds, full_aoi(True)) == pds
    assert filter_by_aoi(pds, full_aoi(False)) == []


def test_filter_drops_exactly_the_outside_points():
    rng = np.random.default_rng(3)
    grid = GroundGrid(GroundPoint(0.0, 0.0), 0.5, 20, 20)
    inside = rng.random(grid.shape) < 0.6
    aoi = AOI(grid, inside)
    pds = [pdet(*rng.uniform(-1, 11, size=2)) for _ in range(200)]
    kept = filter_by_aoi(pds, aoi)
    assert len(pds) - len(kept) == sum(not aoi_contains(aoi, p.ground) for p in pds)


@given(st.lists(st.tuples(st.floats(-60, 60), st.floats(-60, 60)), max_size=30), st.integers(0, 1000))
def test_filter_subsequence_idempotent(points, seed):
    rng = np.random.default_rng(seed)
    aoi = AOI(GroundGrid(GroundPoint(-50.0, -50.0), 5.0, 20, 20), rng.random((20, 20)) < 0.5)
    pds = [pdet(x, y) for x, y in points]
    once = filter_by_aoi(pds, aoi)
    it = iter(pds)
    assert all(any(p is q for q in it) for p in once)
    assert filter_by_aoi(once, aoi) == once


@given(st.lists(st.tuples(st.floats(0, 600), st.floats(0, 400), st.floats(0, 1)), max_size=20),
       st.floats(0, 1))
def test_projection_commutes_with_thresholding(rows, t):
    rig = identity_rig(1)
    dets = [Detection2D(1, 0, BoundingBox2D(x, y, x + 10, y + 30), c) for x, y, c in rows]
    a = [p for p in project_detections(dets, rig) if p.confidence >= t]
    b = project_detections([d for d in dets if d.confidence >= t], rig)
    assert a == b
