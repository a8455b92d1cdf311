"""Triangle meshes, primitive builders, and ray casting.

Primitive meshes are built in a local frame with the base resting on z = 0
and outward-oriented (counter-clockwise) face winding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError

_RAY_EPS = 1e-12


@dataclass
class RayHit:
    point: np.ndarray
    normal: np.ndarray
    t: float
    face: int


@dataclass
class TriMesh:
    """Indexed triangle mesh."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) and (
            self.faces.min() < 0 or self.faces.max() >= len(self.vertices)
        ):
            raise GeometryError("face index out of range")

    def triangles(self) -> np.ndarray:
        """(F, 3, 3) vertex coordinates per face."""
        return self.vertices[self.faces]

    def face_normals(self) -> np.ndarray:
        tri = self.triangles()
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        lens = np.linalg.norm(n, axis=1, keepdims=True)
        lens[lens == 0] = 1.0
        return n / lens

    def face_areas(self) -> np.ndarray:
        tri = self.triangles()
        return 0.5 * np.linalg.norm(
            np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1
        )

    def is_watertight(self) -> bool:
        """Every undirected edge is shared by exactly two faces."""
        edges = {}
        for f in self.faces:
            for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
                key = (min(a, b), max(a, b))
                edges[key] = edges.get(key, 0) + 1
        return all(c == 2 for c in edges.values())

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def transformed(self, rotation: np.ndarray, translation) -> "TriMesh":
        rotation = np.asarray(rotation, dtype=float)
        translation = np.asarray(translation, dtype=float)
        return TriMesh(self.vertices @ rotation.T + translation, self.faces.copy())

    def volume_centroid(self) -> tuple[float, np.ndarray]:
        """Signed volume and volume centroid via the divergence theorem.

        Valid for watertight meshes with outward winding.
        """
        tri = self.triangles()
        a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
        v6 = np.einsum("ij,ij->i", a, np.cross(b, c))
        volume = v6.sum() / 6.0
        if abs(volume) < 1e-15:
            raise GeometryError("mesh has vanishing volume")
        centroid = ((a + b + c) / 4.0 * v6[:, None]).sum(axis=0) / v6.sum()
        return volume, centroid


def box_mesh(w: float, d: float, h: float) -> TriMesh:
    """Axis-aligned box, x-span w, y-span d, height h, base centered at origin."""
    if min(w, d, h) <= 0:
        raise GeometryError("box dims must be positive")
    x, y = w / 2.0, d / 2.0
    v = np.array(
        [
            [-x, -y, 0], [x, -y, 0], [x, y, 0], [-x, y, 0],
            [-x, -y, h], [x, -y, h], [x, y, h], [-x, y, h],
        ],
        dtype=float,
    )
    f = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # bottom (-z)
            [4, 5, 6], [4, 6, 7],  # top (+z)
            [0, 1, 5], [0, 5, 4],  # -y
            [1, 2, 6], [1, 6, 5],  # +x
            [2, 3, 7], [2, 7, 6],  # +y
            [3, 0, 4], [3, 4, 7],  # -x
        ]
    )
    return TriMesh(v, f)


def cylinder_mesh(radius: float, height: float, segments: int = 48) -> TriMesh:
    """Upright cylinder, base circle on z = 0 centered at the origin."""
    if radius <= 0 or height <= 0:
        raise GeometryError("cylinder dims must be positive")
    ang = np.linspace(0.0, 2.0 * np.pi, segments, endpoint=False)
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    bottom = np.column_stack([ring, np.zeros(segments)])
    top = np.column_stack([ring, np.full(segments, height)])
    verts = np.vstack([bottom, top, [[0, 0, 0]], [[0, 0, height]]])
    cb, ct = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces.append([i, j, segments + j])
        faces.append([i, segments + j, segments + i])
        faces.append([cb, j, i])  # bottom fan, -z outward
        faces.append([ct, segments + i, segments + j])  # top fan, +z outward
    return TriMesh(verts, np.array(faces))


def sphere_mesh(radius: float, segments: int = 24) -> TriMesh:
    """UV sphere resting on z = 0 (center at (0, 0, radius)).

    `segments` counts latitude bands; longitude uses 2 * segments.
    """
    if radius <= 0:
        raise GeometryError("sphere radius must be positive")
    n_lat, n_lon = segments, 2 * segments
    lats = np.linspace(0.0, np.pi, n_lat + 1)[1:-1]
    lons = np.linspace(0.0, 2.0 * np.pi, n_lon, endpoint=False)
    ll, tt = np.meshgrid(lons, lats)
    x = radius * np.sin(tt) * np.cos(ll)
    y = radius * np.sin(tt) * np.sin(ll)
    z = radius * np.cos(tt) + radius
    grid = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    verts = np.vstack([[[0, 0, 2 * radius]], grid, [[0, 0, 0]]])
    top, bottom = 0, len(verts) - 1

    def vid(i, j):
        return 1 + i * n_lon + (j % n_lon)

    faces = []
    for j in range(n_lon):
        faces.append([top, vid(0, j), vid(0, j + 1)])
        faces.append([bottom, vid(n_lat - 2, j + 1), vid(n_lat - 2, j)])
    for i in range(n_lat - 2):
        for j in range(n_lon):
            faces.append([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)])
            faces.append([vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)])
    return TriMesh(verts, np.array(faces))


def _cross_nf(a, b):
    """Cross product over broadcast (N, F, 3) operands without np.cross's
    moveaxis overhead."""
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=float)
    np.multiply(ay, bz, out=out[..., 0])
    out[..., 0] -= az * by
    np.multiply(az, bx, out=out[..., 1])
    out[..., 1] -= ax * bz
    np.multiply(ax, by, out=out[..., 2])
    out[..., 2] -= ay * bx
    return out


def _moller_trumbore(origins, dirs, tri):
    """Vectorized ray/triangle intersection parameters.

    origins, dirs: (N, 3); tri: (F, 3, 3). Returns (N, F) ray parameters,
    +inf where there is no intersection with t >= 0.
    """
    v0 = tri[:, 0]
    e1 = tri[:, 1] - v0
    e2 = tri[:, 2] - v0
    pvec = _cross_nf(dirs[:, None, :], e2[None, :, :])
    det = np.einsum("fi,nfi->nf", e1, pvec)
    inv_det = np.where(np.abs(det) > _RAY_EPS, 1.0 / np.where(det == 0, 1.0, det), np.nan)
    tvec = origins[:, None, :] - v0[None, :, :]
    u = np.einsum("nfi,nfi->nf", tvec, pvec) * inv_det
    qvec = _cross_nf(tvec, e1[None, :, :])
    v = np.einsum("nfi,nfi->nf", dirs[:, None, :], qvec) * inv_det
    t = np.einsum("fi,nfi->nf", e2, qvec) * inv_det
    bad = (
        np.isnan(t)
        | (u < -1e-12)
        | (v < -1e-12)
        | (u + v > 1.0 + 1e-12)
        | (t < -1e-12)
    )
    return np.where(bad, np.inf, t)


def raycast_batch(
    mesh: TriMesh, origins: np.ndarray, dirs: np.ndarray, chunk: int = 4_000_000
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-hit parameters for many rays against one mesh.

    Returns (t, face_index); misses hold t = +inf and face -1. Directions
    need not be unit length; t is in units of the supplied direction.
    """
    origins = np.asarray(origins, dtype=float).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    tri = mesh.triangles()
    n, f = len(origins), len(tri)
    best_t = np.full(n, np.inf)
    best_f = np.full(n, -1, dtype=np.int64)
    if n == 0 or f == 0:
        return best_t, best_f
    rows = max(1, chunk // max(f, 1))
    for s in range(0, n, rows):
        e = min(n, s + rows)
        t = _moller_trumbore(origins[s:e], dirs[s:e], tri)
        idx = np.argmin(t, axis=1)
        tmin = t[np.arange(e - s), idx]
        best_t[s:e] = tmin
        best_f[s:e] = np.where(np.isfinite(tmin), idx, -1)
    return best_t, best_f


def raycast_groups(
    mesh: TriMesh, origins: np.ndarray, dirs: np.ndarray, group: int
) -> tuple[np.ndarray, np.ndarray]:
    """raycast_batch for spatially localized ray groups.

    Rays are processed `group` at a time; each group tests only the
    triangles whose AABB overlaps the group's swept column, which is a
    large win when groups are tight bundles (suction rings). Results are
    identical to raycast_batch.
    """
    origins = np.asarray(origins, dtype=float).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    n = len(origins)
    tri = mesh.triangles()
    tri_lo = tri.min(axis=1)
    tri_hi = tri.max(axis=1)
    lo, hi = mesh.bounds()
    center = (lo + hi) / 2
    diag = float(np.linalg.norm(hi - lo))
    best_t = np.full(n, np.inf)
    best_f = np.full(n, -1, dtype=np.int64)
    for s in range(0, n, group):
        e = min(n, s + group)
        o = origins[s:e]
        d = dirs[s:e]
        lens = np.linalg.norm(d, axis=1)
        t_far = (np.linalg.norm(o - center, axis=1).max() + diag) / max(lens.min(), 1e-12)
        ends = o + t_far * d
        col_lo = np.minimum(o.min(axis=0), ends.min(axis=0)) - 1e-9
        col_hi = np.maximum(o.max(axis=0), ends.max(axis=0)) + 1e-9
        mask = np.all(tri_hi >= col_lo, axis=1) & np.all(tri_lo <= col_hi, axis=1)
        if not mask.any():
            continue
        sub = np.nonzero(mask)[0]
        t = _moller_trumbore(o, d, tri[sub])
        idx = np.argmin(t, axis=1)
        tmin = t[np.arange(e - s), idx]
        best_t[s:e] = tmin
        best_f[s:e] = np.where(np.isfinite(tmin), sub[idx], -1)
    return best_t, best_f


def raycast(mesh: TriMesh, origin, direction) -> RayHit | None:
    """Nearest intersection of one ray with a mesh, or None on a miss.

    The returned normal is the outward face normal from the mesh winding.
    """
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    t, face = raycast_batch(mesh, origin[None, :], direction[None, :])
    if not np.isfinite(t[0]):
        return None
    normal = mesh.face_normals()[face[0]]
    return RayHit(point=origin + t[0] * direction, normal=normal, t=float(t[0]), face=int(face[0]))


def sample_surface(
    mesh: TriMesh, count: int, rng: np.random.Generator, faces_mask=None
) -> tuple[np.ndarray, np.ndarray]:
    """Area-weighted surface samples with outward face normals.

    faces_mask optionally restricts sampling to a face subset.
    """
    areas = mesh.face_areas()
    if faces_mask is not None:
        areas = np.where(faces_mask, areas, 0.0)
    total = areas.sum()
    if total <= 0:
        raise GeometryError("no surface area to sample")
    face_idx = rng.choice(len(areas), size=count, p=areas / total)
    tri = mesh.triangles()[face_idx]
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    pts = (
        (1.0 - r1)[:, None] * tri[:, 0]
        + (r1 * (1.0 - r2))[:, None] * tri[:, 1]
        + (r1 * r2)[:, None] * tri[:, 2]
    )
    return pts, mesh.face_normals()[face_idx]
