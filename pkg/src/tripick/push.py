"""Rule-based top-down push planning and its quasi-static effect model.

A push for an out-of-reach object aims it at the scene center: the start
point sits a protecting distance behind the object's far point along the
push direction, and the push distance is capped so the object is never
carried past the center (which keeps every planned push strictly
distance-reducing).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError
from .scene import ObjectInstance, Rect, SceneModel, object_distance

DEFAULT_PROTECT = 0.02
# Two pushes at this distance ferry an object from any spawn point into the
# opposite arm's reach region on the default table.
DEFAULT_PUSH_DIST = 0.16
PUSH_LIMIT_PER_OBJECT = 2


class PushNotNeeded(Exception):
    """Object centroid already coincides with the scene center."""


class InfeasiblePush(Exception):
    """Planned start point falls off the table."""


@dataclass
class PushConfig:
    x: float
    y: float
    theta: float
    dist: float

    def __post_init__(self):
        if self.dist <= 0:
            raise GeometryError("push distance must be > 0")

    @property
    def direction(self) -> np.ndarray:
        return np.array([np.cos(self.theta), np.sin(self.theta)])


@dataclass(frozen=True)
class PushSegment:
    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def length(self) -> float:
        return float(np.hypot(self.x2 - self.x1, self.y2 - self.y1))

    @property
    def direction(self) -> np.ndarray:
        d = np.array([self.x2 - self.x1, self.y2 - self.y1])
        n = np.linalg.norm(d)
        if n < 1e-12:
            raise GeometryError("degenerate push segment")
        return d / n


@dataclass
class WorkspaceModel:
    """Per-arm reach regions (convex CCW polygons in the table plane)."""

    grasp_region: np.ndarray
    suction_region: np.ndarray
    scene_center: np.ndarray
    table_bounds: Rect

    def __post_init__(self):
        self.grasp_region = np.asarray(self.grasp_region, dtype=float).reshape(-1, 2)
        self.suction_region = np.asarray(self.suction_region, dtype=float).reshape(-1, 2)
        self.scene_center = np.asarray(self.scene_center, dtype=float).reshape(2)
        if not self.table_bounds.contains(*self.scene_center):
            raise GeometryError("scene center must lie inside the table bounds")


def rect_polygon(xmin, xmax, ymin, ymax) -> np.ndarray:
    return np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]], dtype=float)


def region_contains(poly: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Vectorized convex CCW polygon membership."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    inside = np.ones(len(points), dtype=bool)
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        cross = (b[0] - a[0]) * (points[:, 1] - a[1]) - (b[1] - a[1]) * (points[:, 0] - a[0])
        inside &= cross >= -1e-12
    return inside


def default_workspace(bounds: Rect, y_frac: float = 0.735, overlap_frac: float = 0.5) -> WorkspaceModel:
    """Left suction arm, right gripper arm, shared central overlap; strips
    near the long table edges are out of both arms' reach."""
    y_reach = y_frac * min(abs(bounds.ymin), abs(bounds.ymax))
    overlap = overlap_frac * (bounds.xmax - bounds.xmin) / 2
    cx, _ = bounds.center
    return WorkspaceModel(
        grasp_region=rect_polygon(cx - overlap, bounds.xmax, -y_reach, y_reach),
        suction_region=rect_polygon(bounds.xmin, cx + overlap, -y_reach, y_reach),
        scene_center=bounds.center,
        table_bounds=bounds,
    )


def plan_push(
    object_points: np.ndarray,
    ws: WorkspaceModel,
    protect: float = DEFAULT_PROTECT,
    dist: float = DEFAULT_PUSH_DIST,
) -> PushConfig:
    """Push the object toward the scene center.

    The start point backs off `protect` behind the object point most
    opposite the push direction; the push distance is min(dist, distance to
    the scene center).
    """
    pts = np.asarray(object_points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise GeometryError("object_points must be nonempty")
    centroid = pts.mean(axis=0)
    to_center = ws.scene_center - centroid
    gap = float(np.linalg.norm(to_center))
    if gap < 1e-6:
        raise PushNotNeeded("object already at the scene center")
    theta = float(np.arctan2(to_center[1], to_center[0]))
    u = np.array([np.cos(theta), np.sin(theta)])
    proj = pts @ u
    # mean of tied extreme points: a flat far edge is pushed at its middle
    far = pts[proj <= proj.min() + 1e-9].mean(axis=0)
    start = far - protect * u
    if not ws.table_bounds.contains(start[0], start[1]):
        raise InfeasiblePush(f"push start {start} falls outside the table")
    return PushConfig(x=float(start[0]), y=float(start[1]), theta=theta, dist=min(dist, gap))


def to_segment(p: PushConfig) -> PushSegment:
    return PushSegment(
        x1=p.x,
        y1=p.y,
        x2=p.x + p.dist * np.cos(p.theta),
        y2=p.y + p.dist * np.sin(p.theta),
    )


def _segment_hits_footprint(seg: PushSegment, hull: np.ndarray) -> bool:
    """Clip the segment against the convex hull's half-planes."""
    p = np.array([seg.x1, seg.y1])
    d = np.array([seg.x2 - seg.x1, seg.y2 - seg.y1])
    t0, t1 = 0.0, 1.0
    n = len(hull)
    for i in range(n):
        a, b = hull[i], hull[(i + 1) % n]
        edge = b - a
        normal = np.array([-edge[1], edge[0]])  # inward for CCW
        denom = float(d @ normal)
        offset = float((a - p) @ normal)
        if abs(denom) < 1e-15:
            if offset > 0:  # parallel and fully outside this half-plane
                return False
            continue
        t = offset / denom
        if denom > 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
        if t0 > t1:
            return False
    return True


def simulate_push(scene: SceneModel, seg: PushSegment, object_id: int) -> SceneModel:
    """Quasi-static single-body push: the target translates by the segment
    length along the segment direction, stopping at first contact with
    another object or the table edge; other objects never move. A segment
    that misses the footprint is a warned no-op."""
    obj = scene.get(object_id)
    hull = obj.footprint_points()
    if not _segment_hits_footprint(seg, hull):
        warnings.warn(f"push segment misses object {object_id}; scene unchanged")
        return scene
    u = seg.direction
    others = scene.others(object_id)

    def feasible(s: float) -> bool:
        moved = ObjectInstance(obj.shape, obj.x + s * u[0], obj.y + s * u[1], obj.yaw, object_id)
        if not moved.in_bounds(scene.table_bounds):
            return False
        return all(object_distance(moved, o) >= -1e-9 for o in others)

    target = seg.length
    if feasible(target):
        s_ok = target
    else:
        # march in steps smaller than any catalog object, then bisect
        s_ok = 0.0
        step = 0.002
        s = step
        while s < target and feasible(s):
            s_ok = s
            s += step
        lo, hi = s_ok, min(s, target)
        for _ in range(40):
            mid = (lo + hi) / 2
            if feasible(mid):
                lo = mid
            else:
                hi = mid
        s_ok = lo
    if s_ok <= 0.0:
        return scene
    return scene.with_pose(object_id, obj.x + s_ok * u[0], obj.y + s_ok * u[1], obj.yaw)
