"""Scene and camera factories shared by the tests."""

from __future__ import annotations

import math

import numpy as np

from semfuse.detections import parse_detection, project_detections
from semfuse.fusion import fuse, globalize
from semfuse.geometry import CameraModel, intrinsics, look_rotation, projection_matrix
from semfuse.refine import pedestrian_mask
from semfuse.semantics import LabelMap
from semfuse.synth import PERSON, Pedestrian, SceneSpec, generate

# three pedestrians seen by four ring cameras, used for planted-truth recovery
PLANTED = (Pedestrian(3.0, 4.0, 1.8, 0.72), Pedestrian(6.0, 6.0, 1.6, 0.64), Pedestrian(5.0, 2.5, 1.75, 0.7))


def random_camera(rng: np.random.Generator, camera_id: int = 1) -> CameraModel:
    """Camera a few meters up, pitched down towards the origin region."""
    W, H = 640, 480
    f = rng.uniform(300.0, 1200.0)
    K = intrinsics(f, W / 2 + rng.uniform(-40, 40), H / 2 + rng.uniform(-40, 40))
    yaw = rng.uniform(0, 2 * math.pi)
    pitch = rng.uniform(math.radians(20), math.radians(70))
    fwd = (math.cos(yaw) * math.cos(pitch), math.sin(yaw) * math.cos(pitch), -math.sin(pitch))
    R = look_rotation(fwd, roll=rng.uniform(-0.1, 0.1))
    center = (rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(2.0, 10.0))
    P = projection_matrix(K, R, center) * rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 2.0)
    return CameraModel(camera_id, P, W, H)


def frame_inputs(scene, frame: int = 0, R1: float = 3.0):
    """Fused global detections and person masks for one synthetic frame."""
    dets = [parse_detection(d) for d in scene.detections if d["frame"] == frame]
    pdets = project_detections(dets, scene.rig)
    globals_ = [globalize(c) for c in fuse(pdets, R1)]
    masks = {cid: pedestrian_mask(LabelMap(cid, frame, scene.labels[(frame, cid)]), [PERSON]) for cid in scene.rig}
    return globals_, masks


def planted_scene(**kw):
    return generate(SceneSpec(pedestrians=PLANTED, **kw))


def nearest_pedestrian(peds, p):
    return min(range(len(peds)), key=lambda i: math.hypot(peds[i].X - p[0], peds[i].Y - p[1]))
