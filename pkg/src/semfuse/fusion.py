"""Greedy ground-plane fusion of projected per-camera detections."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .errors import EmptyComponent
from .detections import ProjectedDetection
from .geometry import GroundPoint

DEFAULT_R1 = 3.0
DEFAULT_HEIGHT = 1.7


@dataclass
class Component:
    members: list[ProjectedDetection] = field(default_factory=list)

    @property
    def cameras(self) -> set[int]:
        return {m.camera_id for m in self.members}

    @property
    def centroid(self) -> GroundPoint:
        n = len(self.members)
        return GroundPoint(sum(m.ground.X for m in self.members) / n, sum(m.ground.Y for m in self.members) / n)


@dataclass
class GlobalDetection:
    ground: GroundPoint
    height: float
    members: Component
    confidence: float


def _dist(a: GroundPoint, b: GroundPoint) -> float:
    return math.hypot(a.X - b.X, a.Y - b.Y)


def fusion_order(pdets: Sequence[ProjectedDetection]) -> list[int]:
    """Processing order: ascending distance from the world origin, then camera id, then input order."""
    return sorted(range(len(pdets)), key=lambda i: (math.hypot(*pdets[i].ground), pdets[i].camera_id, i))


def fuse(pdets: Sequence[ProjectedDetection], R1: float = DEFAULT_R1) -> list[Component]:
    """Agglomerate detections into components.

    A detection may join a component only if it lies within ``R1`` of every
    member and its camera is not represented yet. Among admissible
    components the one with the nearest centroid wins; otherwise the
    detection starts a new component.
    """
    if R1 < 0:
        raise ValueError("R1 must be non-negative")
    comps: list[Component] = []
    sums: list[list[float]] = []
    cams: list[set[int]] = []
    for i in fusion_order(pdets):
        d = pdets[i]
        best, best_dist = None, math.inf
        for c, comp in enumerate(comps):
            if d.camera_id in cams[c]:
                continue
            if any(_dist(d.ground, m.ground) > R1 for m in comp.members):
                continue
            n = len(comp.members)
            dc = math.hypot(d.ground.X - sums[c][0] / n, d.ground.Y - sums[c][1] / n)
            if dc < best_dist:
                best, best_dist = c, dc
        if best is None:
            comps.append(Component([d]))
            sums.append([d.ground.X, d.ground.Y])
            cams.append({d.camera_id})
        else:
            comps[best].members.append(d)
            sums[best][0] += d.ground.X
            sums[best][1] += d.ground.Y
            cams[best].add(d.camera_id)
    return comps


def globalize(c: Component, h0: float = DEFAULT_HEIGHT) -> GlobalDetection:
    if not c.members:
        raise EmptyComponent("cannot globalize an empty component")
    return GlobalDetection(c.centroid, h0, c, max(m.confidence for m in c.members))
