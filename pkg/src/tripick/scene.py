"""Synthetic cluttered tabletop scenes: primitive objects, seeded placement,
depth rendering, and surface sampling.

Objects rest upright on the table plane z = 0 with yaw-only rotations, which
keeps object-object clearances exactly computable (prisms and spheres).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull

from .geometry import CameraIntrinsics, GeometryError, PointCloud
from .meshes import TriMesh, box_mesh, cylinder_mesh, raycast_batch, sphere_mesh

SHAPE_KINDS = ("box", "cylinder", "sphere")


@dataclass(frozen=True)
class Rect:
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if self.xmin >= self.xmax or self.ymin >= self.ymax:
            raise GeometryError("degenerate rectangle")

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.xmin + self.xmax) / 2, (self.ymin + self.ymax) / 2])

    def contains(self, x: float, y: float, margin: float = 0.0) -> bool:
        return (
            self.xmin + margin <= x <= self.xmax - margin
            and self.ymin + margin <= y <= self.ymax - margin
        )

    def inset(self, margin: float) -> "Rect":
        return Rect(self.xmin + margin, self.xmax - margin, self.ymin + margin, self.ymax - margin)


DEFAULT_TABLE = Rect(-0.6, 0.6, -0.3, 0.3)


@dataclass(frozen=True)
class PrimitiveShape:
    """box (w, d, h), cylinder (r, h) or sphere (r,); dims in meters."""

    kind: str
    dims: tuple

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise GeometryError(f"unknown shape kind {self.kind!r}")
        expected = {"box": 3, "cylinder": 2, "sphere": 1}[self.kind]
        if len(self.dims) != expected or min(self.dims) <= 0:
            raise GeometryError(f"bad dims {self.dims} for {self.kind}")
        object.__setattr__(self, "dims", tuple(float(d) for d in self.dims))

    def build_mesh(self) -> TriMesh:
        if self.kind == "box":
            return box_mesh(*self.dims)
        if self.kind == "cylinder":
            return cylinder_mesh(*self.dims)
        return sphere_mesh(self.dims[0])

    @property
    def height(self) -> float:
        if self.kind == "box":
            return self.dims[2]
        if self.kind == "cylinder":
            return self.dims[1]
        return 2 * self.dims[0]

    @property
    def footprint_radius(self) -> float:
        """Radius of the smallest origin-centered circle containing the footprint."""
        if self.kind == "box":
            return float(np.hypot(self.dims[0], self.dims[1]) / 2)
        return self.dims[0]


def _yaw_matrix(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass
class ObjectInstance:
    """A posed primitive resting on the table."""

    shape: PrimitiveShape
    x: float
    y: float
    yaw: float
    object_id: int
    _mesh: TriMesh | None = field(default=None, repr=False, compare=False)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, 0.0])

    def rotation(self) -> np.ndarray:
        return _yaw_matrix(self.yaw)

    def mesh(self) -> TriMesh:
        if self._mesh is None:
            self._mesh = self.shape.build_mesh().transformed(self.rotation(), self.position)
        return self._mesh

    def centroid(self) -> np.ndarray:
        """Volume centroid in world coordinates (exact for these primitives)."""
        if self.shape.kind == "sphere":
            local = np.array([0.0, 0.0, self.shape.dims[0]])
        else:
            local = np.array([0.0, 0.0, self.shape.height / 2])
        return self.rotation() @ local + self.position

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        return self.mesh().bounds()

    def footprint_polygon(self) -> np.ndarray | None:
        """CCW corner list for boxes; None for circular footprints."""
        if self.shape.kind != "box":
            return None
        w, d, _ = self.shape.dims
        corners = np.array([[-w / 2, -d / 2], [w / 2, -d / 2], [w / 2, d / 2], [-w / 2, d / 2]])
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return corners @ rot.T + [self.x, self.y]

    def footprint_points(self) -> np.ndarray:
        """2D convex-hull vertices of the projected surface."""
        poly = self.footprint_polygon()
        if poly is not None:
            return poly
        verts2d = self.mesh().vertices[:, :2]
        hull = ConvexHull(verts2d)
        return verts2d[hull.vertices]

    def in_bounds(self, bounds: Rect) -> bool:
        pts = self.footprint_points()
        return all(bounds.contains(px, py) for px, py in pts)


# ---------------------------------------------------------------------------
# Exact clearance computations (upright prisms and spheres)
# ---------------------------------------------------------------------------


def _point_to_segment(p, a, b):
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / max(np.dot(ab, ab), 1e-300), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def _point_in_convex(p, poly) -> bool:
    n = len(poly)
    sign = 0.0
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
        if cross * sign < -1e-18:
            return False
        if cross != 0.0:
            sign = cross
    return True


def point_to_polygon_signed(p, poly) -> float:
    """Distance to a convex polygon boundary; negative when inside."""
    p = np.asarray(p, dtype=float)
    d = min(_point_to_segment(p, poly[i], poly[(i + 1) % len(poly)]) for i in range(len(poly)))
    return -d if _point_in_convex(p, poly) else d


def _polygons_overlap(pa, pb) -> bool:
    """Separating-axis test for convex polygons."""
    for poly1, poly2 in ((pa, pb), (pb, pa)):
        n = len(poly1)
        for i in range(n):
            edge = poly1[(i + 1) % n] - poly1[i]
            axis = np.array([-edge[1], edge[0]])
            p1 = poly1 @ axis
            p2 = poly2 @ axis
            if p1.max() < p2.min() or p2.max() < p1.min():
                return False
    return True


def _polygon_polygon_distance(pa, pb) -> float:
    if _polygons_overlap(pa, pb):
        return -1e-3  # overlap; callers only use the sign
    best = np.inf
    for poly1, poly2 in ((pa, pb), (pb, pa)):
        for p in poly1:
            for i in range(len(poly2)):
                best = min(best, _point_to_segment(p, poly2[i], poly2[(i + 1) % len(poly2)]))
    return best


def _footprint_2d(obj: ObjectInstance):
    """(polygon, None) for boxes, (center, radius) for circular footprints."""
    poly = obj.footprint_polygon()
    if poly is not None:
        return poly, None
    return np.array([obj.x, obj.y]), obj.shape.dims[0]


def _footprint_distance(a: ObjectInstance, b: ObjectInstance) -> float:
    fa, ra = _footprint_2d(a)
    fb, rb = _footprint_2d(b)
    if ra is None and rb is None:
        return _polygon_polygon_distance(fa, fb)
    if ra is not None and rb is not None:
        return float(np.linalg.norm(fa - fb)) - ra - rb
    if ra is None:
        return point_to_polygon_signed(fb, fa) - rb
    return point_to_polygon_signed(fa, fb) - ra


def point_to_object(p, obj: ObjectInstance) -> float:
    """Exact 3D distance from a point to a solid primitive; negative inside."""
    p = np.asarray(p, dtype=float)
    if obj.shape.kind == "sphere":
        r = obj.shape.dims[0]
        center = np.array([obj.x, obj.y, r])
        return float(np.linalg.norm(p - center)) - r
    fp, rad = _footprint_2d(obj)
    if rad is None:
        d2 = point_to_polygon_signed(p[:2], fp)
    else:
        d2 = float(np.linalg.norm(p[:2] - fp)) - rad
    h = obj.shape.height
    dz_above = p[2] - h
    dz_below = -p[2]
    dz = max(dz_above, dz_below)
    if d2 <= 0.0 and dz <= 0.0:
        return max(d2, dz)  # inside
    return float(np.hypot(max(d2, 0.0), max(dz, 0.0)))


def points_to_object(points: np.ndarray, obj: ObjectInstance) -> np.ndarray:
    """Vectorized point_to_object over an (N, 3) array."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if obj.shape.kind == "sphere":
        r = obj.shape.dims[0]
        center = np.array([obj.x, obj.y, r])
        return np.linalg.norm(points - center, axis=1) - r
    fp, rad = _footprint_2d(obj)
    if rad is None:
        d2 = _points_to_polygon_signed(points[:, :2], fp)
    else:
        d2 = np.linalg.norm(points[:, :2] - fp, axis=1) - rad
    h = obj.shape.height
    dz = np.maximum(points[:, 2] - h, -points[:, 2])
    inside = (d2 <= 0.0) & (dz <= 0.0)
    out = np.hypot(np.maximum(d2, 0.0), np.maximum(dz, 0.0))
    return np.where(inside, np.maximum(d2, dz), out)


def _points_to_polygon_signed(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Vectorized signed distance from 2D points to a convex CCW polygon."""
    pts = np.asarray(pts, dtype=float)
    n = len(poly)
    dmin = np.full(len(pts), np.inf)
    inside = np.ones(len(pts), dtype=bool)
    for i in range(n):
        a = poly[i]
        b = poly[(i + 1) % n]
        ab = b - a
        denom = max(float(ab @ ab), 1e-300)
        t = np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
        proj = a + t[:, None] * ab
        dmin = np.minimum(dmin, np.linalg.norm(pts - proj, axis=1))
        cross = ab[0] * (pts[:, 1] - a[1]) - ab[1] * (pts[:, 0] - a[0])
        inside &= cross >= -1e-18
    return np.where(inside, -dmin, dmin)


def object_distance(a: ObjectInstance, b: ObjectInstance) -> float:
    """Exact separation between two resting primitives; <= 0 when touching
    or interpenetrating."""
    sph_a, sph_b = a.shape.kind == "sphere", b.shape.kind == "sphere"
    if sph_a and sph_b:
        ca = np.array([a.x, a.y, a.shape.dims[0]])
        cb = np.array([b.x, b.y, b.shape.dims[0]])
        return float(np.linalg.norm(ca - cb)) - a.shape.dims[0] - b.shape.dims[0]
    if sph_a or sph_b:
        sph, other = (a, b) if sph_a else (b, a)
        center = np.array([sph.x, sph.y, sph.shape.dims[0]])
        return point_to_object(center, other) - sph.shape.dims[0]
    # two upright prisms share z = 0, so the 3D gap equals the footprint gap
    return _footprint_distance(a, b)


def min_clearance(scene: "SceneModel") -> float:
    objs = scene.objects
    if len(objs) < 2:
        return np.inf
    return min(
        object_distance(objs[i], objs[j])
        for i in range(len(objs))
        for j in range(i + 1, len(objs))
    )


# ---------------------------------------------------------------------------
# Scene model and generation
# ---------------------------------------------------------------------------


@dataclass
class SceneModel:
    """Immutable-by-convention scene; mutating operations return new scenes."""

    objects: tuple
    table_bounds: Rect
    scene_center: np.ndarray
    seed: int

    def __post_init__(self):
        self.objects = tuple(self.objects)
        self.scene_center = np.asarray(self.scene_center, dtype=float).reshape(2)
        if not self.table_bounds.contains(*self.scene_center):
            raise GeometryError("scene center must lie inside the table bounds")

    def get(self, object_id: int) -> ObjectInstance:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise KeyError(f"no object with id {object_id}")

    def others(self, object_id: int):
        return [o for o in self.objects if o.object_id != object_id]

    def remove(self, object_id: int) -> "SceneModel":
        self.get(object_id)
        return SceneModel(
            tuple(o for o in self.objects if o.object_id != object_id),
            self.table_bounds,
            self.scene_center,
            self.seed,
        )

    def with_pose(self, object_id: int, x: float, y: float, yaw: float) -> "SceneModel":
        old = self.get(object_id)
        moved = ObjectInstance(old.shape, x, y, yaw, object_id)
        return SceneModel(
            tuple(moved if o.object_id == object_id else o for o in self.objects),
            self.table_bounds,
            self.scene_center,
            self.seed,
        )


def default_catalog() -> tuple[PrimitiveShape, ...]:
    """Shapes spanning the picking regimes: narrow boxes only the gripper can
    take, wide flat boxes only the cup can take, and shapes either arm can
    handle."""
    return (
        PrimitiveShape("box", (0.018, 0.05, 0.018)),    # narrow + low: grasp only
        PrimitiveShape("box", (0.015, 0.04, 0.016)),    # narrow + low: grasp only
        PrimitiveShape("box", (0.10, 0.08, 0.05)),      # wide flat: suction only
        PrimitiveShape("box", (0.12, 0.09, 0.04)),      # wide flat: suction only
        PrimitiveShape("box", (0.04, 0.04, 0.035)),     # cube: either
        PrimitiveShape("cylinder", (0.018, 0.06)),      # slim can: either
        PrimitiveShape("cylinder", (0.032, 0.05)),      # wide can: suction only
        PrimitiveShape("sphere", (0.02,)),              # ball: either
        PrimitiveShape("sphere", (0.0275,)),            # large ball: suction only
    )


def generate_scene(
    seed: int,
    n_objects: int,
    bounds: Rect = DEFAULT_TABLE,
    catalog: tuple = None,
    clearance: float = 0.004,
    max_attempts: int = 1000,
    edge_margin: float = 0.02,
) -> SceneModel:
    """Seeded rejection-sampled clutter; deterministic for fixed arguments.

    Objects are placed one at a time, resampling on collision; if an object
    exhausts its attempt budget the scene is returned partially filled with
    a warning.
    """
    if n_objects < 1:
        raise GeometryError("n_objects must be >= 1")
    catalog = tuple(catalog) if catalog else default_catalog()
    rng = np.random.default_rng(seed)
    placed = []
    for oid in range(1, n_objects + 1):
        ok = False
        for _ in range(max_attempts):
            shape = catalog[int(rng.integers(len(catalog)))]
            margin = shape.footprint_radius + edge_margin
            if bounds.xmin + margin >= bounds.xmax - margin or bounds.ymin + margin >= bounds.ymax - margin:
                continue  # shape cannot fit these bounds at all
            x = rng.uniform(bounds.xmin + margin, bounds.xmax - margin)
            y = rng.uniform(bounds.ymin + margin, bounds.ymax - margin)
            yaw = rng.uniform(0.0, 2 * np.pi)
            cand = ObjectInstance(shape, x, y, yaw, oid)
            if all(object_distance(cand, o) >= clearance for o in placed):
                placed.append(cand)
                ok = True
                break
        if not ok:
            warnings.warn(
                f"placement budget exhausted: placed {len(placed)} of {n_objects} objects"
            )
            break
    return SceneModel(tuple(placed), bounds, bounds.center, seed)


# ---------------------------------------------------------------------------
# Scene-level ray casting
# ---------------------------------------------------------------------------


def _aabb_ray_mask(origins, dirs, lo, hi) -> np.ndarray:
    """Vectorized slab test: which rays can intersect the AABB [lo, hi]."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (lo[None, :] - origins) * inv
        t2 = (hi[None, :] - origins) * inv
    tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
    tmax = np.where(np.isnan(t2), np.inf, np.maximum(t1, t2))
    parallel_outside = (np.abs(dirs) < 1e-300) & ((origins < lo[None, :]) | (origins > hi[None, :]))
    tmin = tmin.max(axis=1)
    tmax = np.where(parallel_outside.any(axis=1), -np.inf, tmax.min(axis=1))
    return (tmax >= tmin) & (tmax >= 0.0)


@dataclass
class SceneHits:
    t: np.ndarray          # ray parameter, inf = miss
    object_id: np.ndarray  # hit object id, 0 = table, -1 = miss
    normal: np.ndarray     # outward surface normal at the hit (NaN on miss)


def raycast_scene(
    scene: SceneModel,
    origins: np.ndarray,
    dirs: np.ndarray,
    include_table: bool = False,
    only_ids=None,
    exclude_ids=(),
) -> SceneHits:
    """Nearest hit over all scene objects (optionally the table plane z=0),
    with per-object AABB pruning."""
    origins = np.asarray(origins, dtype=float).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    n = len(origins)
    best_t = np.full(n, np.inf)
    best_id = np.full(n, -1, dtype=np.int64)
    best_normal = np.full((n, 3), np.nan)
    for obj in scene.objects:
        if only_ids is not None and obj.object_id not in only_ids:
            continue
        if obj.object_id in exclude_ids:
            continue
        lo, hi = obj.aabb()
        mask = _aabb_ray_mask(origins, dirs, lo - 1e-9, hi + 1e-9)
        if not mask.any():
            continue
        idx = np.nonzero(mask)[0]
        t, face = raycast_batch(obj.mesh(), origins[idx], dirs[idx])
        better = t < best_t[idx]
        upd = idx[better]
        best_t[upd] = t[better]
        best_id[upd] = obj.object_id
        normals = obj.mesh().face_normals()
        best_normal[upd] = normals[face[better]]
    if include_table:
        with np.errstate(divide="ignore", invalid="ignore"):
            t_table = -origins[:, 2] / dirs[:, 2]
        t_table = np.where((dirs[:, 2] != 0) & (t_table > 0), t_table, np.inf)
        better = t_table < best_t
        best_t[better] = t_table[better]
        best_id[better] = 0
        best_normal[better] = [0.0, 0.0, 1.0]
    return SceneHits(best_t, best_id, best_normal)


# ---------------------------------------------------------------------------
# Rendering and sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera; `rotation` maps camera coordinates to world."""

    intrinsics: CameraIntrinsics
    position: tuple
    rotation: tuple  # 3x3 row tuples

    def rot(self) -> np.ndarray:
        return np.asarray(self.rotation, dtype=float).reshape(3, 3)

    def pos(self) -> np.ndarray:
        return np.asarray(self.position, dtype=float).reshape(3)

    def world_to_cam(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return (pts - self.pos()) @ self.rot()

    def pixel_dirs_world(self) -> np.ndarray:
        """(H, W, 3) unnormalized ray directions with unit camera-z component,
        so the ray parameter equals pinhole depth."""
        intr = self.intrinsics
        us = (np.arange(intr.width) - intr.cx) / intr.fx
        vs = (np.arange(intr.height) - intr.cy) / intr.fy
        uu, vv = np.meshgrid(us, vs)
        d_cam = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
        return d_cam @ self.rot().T


def default_camera(
    bounds: Rect = DEFAULT_TABLE, height: float = 1.3, resolution=(320, 240)
) -> CameraModel:
    """Straight-down camera centered over the table, framing it with margin."""
    w, h = resolution
    half_w = max(abs(bounds.xmin), abs(bounds.xmax)) + 0.05
    half_h = max(abs(bounds.ymin), abs(bounds.ymax)) + 0.05
    f = min((w / 2) * height / half_w, (h / 2) * height / half_h)
    intr = CameraIntrinsics(fx=f, fy=f, cx=(w - 1) / 2, cy=(h - 1) / 2, width=w, height=h)
    cx, cy = bounds.center
    rot = ((1.0, 0.0, 0.0), (0.0, -1.0, 0.0), (0.0, 0.0, -1.0))
    return CameraModel(intrinsics=intr, position=(cx, cy, height), rotation=rot)


@dataclass
class RenderResult:
    depth: np.ndarray         # (H, W) meters, pinhole z-depth
    instance_map: np.ndarray  # (H, W) int32, 0 = table/background
    centers: dict             # object id -> world-frame volume centroid
    camera: CameraModel


def render_depth(scene: SceneModel, camera: CameraModel) -> RenderResult:
    """Nearest-surface depth and instance id per pixel via ray casting."""
    intr = camera.intrinsics
    H, W = intr.height, intr.width
    origin = camera.pos()
    dirs = camera.pixel_dirs_world().reshape(-1, 3)
    depth = np.full(H * W, np.inf)
    inst = np.zeros(H * W, dtype=np.int32)
    # table plane z = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        t_table = -origin[2] / dirs[:, 2]
    hit_table = (dirs[:, 2] != 0) & (t_table > 0)
    depth[hit_table] = t_table[hit_table]
    for obj in scene.objects:
        lo, hi = obj.aabb()
        mask = _aabb_ray_mask(origin[None, :].repeat(len(dirs), axis=0), dirs, lo - 1e-9, hi + 1e-9)
        idx = np.nonzero(mask)[0]
        if len(idx) == 0:
            continue
        t, _ = raycast_batch(obj.mesh(), np.tile(origin, (len(idx), 1)), dirs[idx])
        better = t < depth[idx]
        depth[idx[better]] = t[better]
        inst[idx[better]] = obj.object_id
    depth[~np.isfinite(depth)] = 0.0
    centers = {o.object_id: o.centroid() for o in scene.objects}
    return RenderResult(
        depth=depth.reshape(H, W),
        instance_map=inst.reshape(H, W),
        centers=centers,
        camera=camera,
    )


def visible_area_fractions(scene: SceneModel) -> dict:
    """Per-object share of total upward-facing surface area."""
    areas = {}
    for obj in scene.objects:
        mesh = obj.mesh()
        up = mesh.face_normals()[:, 2] > 1e-9
        areas[obj.object_id] = float(mesh.face_areas()[up].sum())
    total = sum(areas.values())
    return {k: v / total for k, v in areas.items()}


def sample_cloud(scene: SceneModel, count: int = 16384, seed: int | None = None) -> PointCloud:
    """Exactly `count` area-weighted samples of upward-facing object surfaces,
    with outward normals."""
    if not scene.objects:
        raise GeometryError("scene has no objects to sample")
    rng = np.random.default_rng(scene.seed if seed is None else seed)
    tri_list = []
    normal_list = []
    area_list = []
    for obj in scene.objects:
        mesh = obj.mesh()
        normals = mesh.face_normals()
        up = normals[:, 2] > 1e-9
        tri_list.append(mesh.triangles()[up])
        normal_list.append(normals[up])
        area_list.append(mesh.face_areas()[up])
    tris = np.concatenate(tri_list)
    normals = np.concatenate(normal_list)
    areas = np.concatenate(area_list)
    face_idx = rng.choice(len(areas), size=count, p=areas / areas.sum())
    tri = tris[face_idx]
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    pts = (
        (1.0 - r1)[:, None] * tri[:, 0]
        + (r1 * (1.0 - r2))[:, None] * tri[:, 1]
        + (r1 * r2)[:, None] * tri[:, 2]
    )
    return PointCloud(points=pts, normals=normals[face_idx])
