from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from semfuse.detections import Detection2D, ProjectedDetection
from semfuse.errors import MissingMask
from semfuse.fusion import Component, GlobalDetection
from semfuse.geometry import BoundingBox2D, CameraModel, GroundPoint
from semfuse.refine import (AdaptedSegmentSet, OptimizerConfig, PedestrianMask, cost, gradient, init_segments,
                            optimize, pedestrian_mask, segment_box, step_direction)
from semfuse.semantics import LabelMap
from semfuse.synth import Pedestrian, SceneSpec, generate

from scenes import frame_inputs


def affine_camera(width, height, cx=0.5, v0=None, scale=1.0, cid=1):
    """u = X + cx, v = v0 - scale * Z; Y is invisible."""
    v0 = height if v0 is None else v0
    P = np.array([[1.0, 0.0, 0.0, cx], [0.0, 0.0, -scale, v0], [0.0, 0.0, 0.0, 1.0]])
    return CameraModel(cid, P, width, height)


def single(X, h, cams=(1,), Y=0.0):
    return AdaptedSegmentSet(list(cams), np.array([[X, Y]]), np.array([h]),
                             np.array([[[X, Y]] * len(cams)], dtype=float))


def gdet(X, Y, h=1.7, conf=1.0):
    d = ProjectedDetection(Detection2D(1, 0, BoundingBox2D(0, 0, 1, 1), conf), GroundPoint(X, Y))
    return GlobalDetection(GroundPoint(X, Y), h, Component([d]), conf)


def test_pedestrian_mask():
    assert pedestrian_mask(LabelMap(1, 0, np.full((3, 3), 12)), [12]).mask.all()
    assert not pedestrian_mask(LabelMap(1, 0, np.zeros((3, 3))), [12]).mask.any()
    rng = np.random.default_rng(0)
    lab = rng.integers(0, 20, (30, 40))
    m = pedestrian_mask(LabelMap(1, 0, lab), [12, 15])
    hist = np.bincount(lab.ravel(), minlength=20)
    assert m.mask.sum() == hist[12] + hist[15]


def test_init_segments():
    segs = init_segments([gdet(1.0, 2.0)], [1, 2, 3])
    assert segs.bases.shape == (1, 3, 2) and (segs.bases == [1.0, 2.0]).all()
    assert segs.heights.tolist() == [1.7]
    assert init_segments([], [1, 2]).M == 0
    segs = init_segments([gdet(0, 0), gdet(3, 1, h=1.6)], [1, 2, 3, 4])
    assert segs.M * segs.K == 8 and len(segs.heights) == 2
    assert segs.vector().shape == (2 * 4 * 2 + 2,)


def test_cost_empty_scene_is_zero():
    cam = affine_camera(2, 2)
    empty = AdaptedSegmentSet([1], np.zeros((0, 2)), np.zeros(0), np.zeros((0, 1, 2)))
    assert cost(empty, {1: np.zeros((2, 2), bool)}, {1: cam}) == 0.0


def test_cost_single_uncovered_person_pixel():
    cam = affine_camera(2, 2)
    mask = np.zeros((2, 2), bool)
    mask[0, 0] = True
    empty = AdaptedSegmentSet([1], np.zeros((0, 2)), np.zeros(0), np.zeros((0, 1, 2)))
    assert cost(empty, {1: mask}, {1: cam}) == -0.25


def test_cost_box_through_person_pixel():
    # base X = 0 maps to u = 0.5; height 1 with v0 = 1 and aspect 1 -> box [0, 1] x [0, 1]
    cam = affine_camera(2, 2, v0=1.0)
    mask = np.zeros((2, 2), bool)
    mask[0, 0] = True
    segs = single(0.0, 1.0)
    _, box = segment_box(cam, segs.bases[0, 0], 1.0, 1.0)
    assert box.as_tuple() == (0.0, 0.0, 1.0, 1.0)
    # the person pixel is on the axis (d clamped to 1): Phi = 0; background is uncovered
    assert cost(segs, {1: mask}, {1: cam}, OptimizerConfig(aspect=1.0)) == 0.0


def test_cost_covered_background_next_to_axis():
    # a taller box also covers the background pixel below: Phi = omega / 3 there
    cam = affine_camera(2, 2, v0=2.0)
    mask = np.zeros((2, 2), bool)
    mask[0, 0] = True
    assert cost(single(0.0, 2.0), {1: mask}, {1: cam}, OptimizerConfig(aspect=0.5)) == pytest.approx(-1 / 12)


def quad_cost(cam, mask, boxes_axes, omega):
    """Row-integrated cost evaluated with adaptive quadrature, pixel by pixel."""
    H, W = mask.shape
    total = 0.0
    for v in range(H):
        for u in range(W):
            prod = 1.0
            for (x0, y0, x1, y1), xa in boxes_axes:
                cy = max(0.0, min(v + 1, y1) - max(v, y0))
                a, b = max(u, x0), min(u + 1, x1)
                if cy <= 0 or b <= a:
                    continue
                inv = quad(lambda t: 1.0 / max(abs(t - xa), 1.0), a, b, points=[xa - 1, xa, xa + 1], limit=200)[0]
                prod *= 1.0 - cy * inv
            total += omega * prod if mask[v, u] else omega / 3.0 * (1.0 - prod)
    return -total / mask.size


@pytest.mark.parametrize("X1,X2,h1,h2", [(7.3, 11.9, 12.4, 9.7), (4.1, 5.6, 17.2, 14.9), (2.2, 30.0, 6.3, 3.1)])
def test_cost_matches_quadrature_oracle(X1, X2, h1, h2):
    cam = affine_camera(24, 20, cx=0.0, v0=18.6)
    rng = np.random.default_rng(int(X1 * 10))
    mask = rng.random((20, 24)) < 0.4
    cfg = OptimizerConfig(aspect=0.45, omega=1.3)
    segs = AdaptedSegmentSet([1], np.array([[X1, 0.0], [X2, 0.0]]), np.array([h1, h2]),
                             np.array([[[X1, 0.0]], [[X2, 0.0]]]))
    boxes = []
    for m in range(2):
        seg, box = segment_box(cam, segs.bases[m, 0], segs.heights[m], cfg.aspect)
        boxes.append((box.as_tuple(), seg.foot.x))
    assert cost(segs, {1: mask}, {1: cam}, cfg) == pytest.approx(quad_cost(cam, mask, boxes, cfg.omega), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), omega=st.floats(0.1, 5.0))
def test_cost_range(seed, omega):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(1, 3))
    cams = {k: affine_camera(30, 20, cx=float(rng.uniform(0, 30)), v0=float(rng.uniform(5, 20)), cid=k)
            for k in range(1, K + 1)}
    M = int(rng.integers(1, 4))
    X = rng.uniform(-5, 35, M)
    segs = AdaptedSegmentSet(list(cams), np.stack([X, np.zeros(M)], 1), rng.uniform(1, 15, M),
                             np.repeat(np.stack([X, np.zeros(M)], 1)[:, None], K, axis=1))
    masks = {k: rng.random((20, 30)) < 0.3 for k in cams}
    psi = cost(segs, masks, cams, OptimizerConfig(omega=omega))
    assert -K * omega - 1e-12 <= psi <= 1e-12


def test_missing_mask_names_camera_and_frame():
    with pytest.raises(MissingMask) as e:
        optimize([gdet(0, 0)], {1: np.zeros((4, 4), bool)},
                 {1: affine_camera(4, 4), 2: affine_camera(4, 4, cid=2)}, frame=7)
    assert e.value.camera_id == 2 and e.value.frame == 7
    assert "camera 2" in str(e.value) and "frame 7" in str(e.value)


# -- gradient -------------------------------------------------------------------


def test_gradient_is_forward_difference_in_fixed_order():
    cams = {1: affine_camera(40, 30, cx=0.0, v0=28.0), 2: affine_camera(40, 30, cx=3.0, v0=25.0, cid=2)}
    rng = np.random.default_rng(2)
    masks = {k: rng.random((30, 40)) < 0.4 for k in cams}
    segs = AdaptedSegmentSet([1, 2], np.array([[10.0, 0.0], [25.0, 0.0]]), np.array([20.0, 14.0]),
                             np.array([[[10.3, 0.0], [9.6, 0.0]], [[25.2, 0.0], [24.1, 0.0]]]))
    cfg = OptimizerConfig()
    g = gradient(segs, masks, cams, cfg)
    theta = segs.vector()
    # (m, k, X/Y) m-major, then heights
    assert theta.tolist() == [10.3, 0.0, 9.6, 0.0, 25.2, 0.0, 24.1, 0.0, 20.0, 14.0]
    psi0 = cost(segs, masks, cams, cfg)
    for j in range(len(theta)):
        t = theta.copy()
        t[j] += cfg.epsilon
        assert g[j] == pytest.approx((cost(segs.with_vector(t), masks, cams, cfg) - psi0) / cfg.epsilon, abs=1e-12)
    # Y does not reach the image in these cameras
    assert g[1::2][:4].tolist() == [0.0] * 4


def test_gradient_dead_parameter_off_image():
    cam = affine_camera(20, 20, cx=0.0, v0=15.0)
    segs = single(-500.0, 10.0)
    g = gradient(segs, {1: np.ones((20, 20), bool)}, {1: cam})
    assert (g == 0).all()


def test_gradient_translation_inside_uniform_mask():
    # the box lies well inside a symmetric person region: moving the axis changes nothing
    cam = affine_camera(60, 40, cx=0.0, v0=35.0)
    mask = np.zeros((40, 60), bool)
    mask[2:38, 10:50] = True
    segs = single(30.0, 30.0)
    g = gradient(segs, {1: mask}, {1: cam}, OptimizerConfig(aspect=0.4))
    assert abs(g[0]) <= 1e-9


# -- optimizer ----------------------------------------------------------------


def test_step_direction():
    # one detection, three cameras: three (X, Y) pairs then one height
    g = np.array([0.2, -0.1, 0.0, 0.0, 0.004, 0.001, -0.5])
    np.testing.assert_allclose(step_direction(g, 1, 3, "segment"), [1.0, -0.5, 0.0, 0.0, 1.0, 0.25, -1.0])
    np.testing.assert_allclose(step_direction(g, 1, 3, "global"), g / 0.5)


def test_optimizer_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(R2=0)
    with pytest.raises(ValueError):
        OptimizerConfig(step_norm="raw")


def test_empty_frame():
    res = optimize([], {1: np.zeros((4, 4), bool)}, {1: affine_camera(4, 4)})
    assert res.converged and res.detections == [] and res.stop_reason == "empty"


def test_perfect_alignment_does_not_move():
    # a 1.7 m tall, 0.68 m wide billboard equals the initial back-projected box
    scene = generate(SceneSpec(pedestrians=(Pedestrian(4.0, 5.5, 1.7, 0.68),)))
    globals_, masks = frame_inputs(scene)
    res = optimize(globals_, masks, scene.rig)
    assert res.converged
    assert res.history == [res.history[0]]
    assert np.abs(res.segments.displacement()).max() <= OptimizerConfig().epsilon
    assert res.segments.heights[0] == pytest.approx(1.7, abs=OptimizerConfig().epsilon)


def test_displaced_mask_is_recovered():
    scene = generate(SceneSpec(pedestrians=(Pedestrian(4.0, 5.5, 1.7, 0.68),)))
    globals_, masks = frame_inputs(scene)
    shifted = {c: PedestrianMask(c, 0, np.roll(m.mask, 10, axis=1)) for c, m in masks.items()}
    res = optimize(globals_, shifted, scene.rig)
    assert res.converged
    det = res.detections[0]
    for c, m in shifted.items():
        cols = np.nonzero(m.mask.any(axis=0))[0]
        centre = (cols.min() + cols.max() + 1) / 2.0
        box = det.boxes[c]
        assert abs((box.x_min + box.x_max) / 2.0 - centre) <= 3.0
    assert det.height == pytest.approx(1.7, rel=0.05)
    assert np.diff(res.history).min() >= 0


def test_overlapping_pedestrians_stay_in_their_balls():
    # two people in line with camera 1 overlap there and are separate elsewhere
    scene = generate(SceneSpec(pedestrians=(Pedestrian(4.0, 4.0, 1.75, 0.7), Pedestrian(5.2, 5.2, 1.65, 0.66)),
                               detection_jitter=4.0, seed=1))
    globals_, masks = frame_inputs(scene)
    cfg = OptimizerConfig(R2=0.15)
    res = optimize(globals_, masks, scene.rig, cfg)
    assert res.segments.displacement().max() <= cfg.R2
    assert np.diff(res.history).min() >= 0
    for d in res.detections:
        # one height per detection behind every camera's box
        for c, box in d.boxes.items():
            seg, expect = segment_box(scene.rig[c], d.bases[c], d.height, cfg.aspect)
            assert box == expect


def test_breach_freezes_segment():
    scene = generate(SceneSpec(pedestrians=(Pedestrian(4.0, 5.5, 1.7, 0.68),)))
    globals_, masks = frame_inputs(scene)
    shifted = {c: PedestrianMask(c, 0, np.roll(m.mask, 25, axis=1)) for c, m in masks.items()}
    cfg = OptimizerConfig(R2=0.05)
    res = optimize(globals_, shifted, scene.rig, cfg)
    assert res.frozen.any()
    assert res.segments.displacement().max() <= cfg.R2
    # a frozen base keeps the value it had when the breach was detected
    assert (res.segments.displacement()[res.frozen] <= cfg.R2).all()


def test_optimize_is_deterministic(noiseless_scene):
    globals_, masks = frame_inputs(noiseless_scene)
    a = optimize(globals_, masks, noiseless_scene.rig)
    b = optimize(globals_, masks, noiseless_scene.rig)
    np.testing.assert_array_equal(a.segments.vector(), b.segments.vector())
    assert a.history == b.history
