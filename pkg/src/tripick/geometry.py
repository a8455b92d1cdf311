"""Point-cloud, camera, and rotation primitives shared by the rest of the toolkit.

All coordinates are meters in a right-handed frame with +z up off the table.
Approach directions are encoded by an azimuth angle theta1 in [0, 2*pi), an
elevation angle theta2 in [0, pi/2] measured below the x-y plane (theta2 =
pi/2 is straight down), and an in-plane axis angle theta3 in [-pi, pi].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

TWO_PI = 2.0 * np.pi


class GeometryError(ValueError):
    """Invalid geometric input (bad ranges, non-orthogonal frames, ...)."""


def normalize(v) -> np.ndarray:
    """Return v scaled to unit length; raises on (near-)zero vectors."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise GeometryError("cannot normalize a zero-length vector")
    return v / n


def is_unit(v, tol: float = 1e-9) -> bool:
    return abs(np.linalg.norm(np.asarray(v, dtype=float)) - 1.0) <= tol


@dataclass(frozen=True)
class RotationAngles:
    """Approach/axis rotation triple (radians).

    theta1 in [0, 2*pi), theta2 in [0, pi/2], theta3 in [-pi, pi].
    """

    theta1: float
    theta2: float
    theta3: float

    def __post_init__(self):
        if not (0.0 <= self.theta1 < TWO_PI + 1e-12):
            raise GeometryError(f"theta1={self.theta1} outside [0, 2*pi)")
        if not (-1e-12 <= self.theta2 <= np.pi / 2 + 1e-12):
            raise GeometryError(f"theta2={self.theta2} outside [0, pi/2]")
        if not (-np.pi - 1e-12 <= self.theta3 <= np.pi + 1e-12):
            raise GeometryError(f"theta3={self.theta3} outside [-pi, pi]")

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.theta2, self.theta3], dtype=float)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise GeometryError("principal point must lie inside the image")


@dataclass
class PointCloud:
    """Unordered point set with optional per-point unit normals.

    Invalid normals (degenerate neighborhoods) are NaN rows.
    """

    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if len(self.normals) != len(self.points):
                raise GeometryError(
                    f"normals length {len(self.normals)} != points length {len(self.points)}"
                )

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class OrganizedCloud:
    """H x W grid of 3D points backprojected from a depth image.

    Pixels with invalid depth hold NaN.
    """

    grid: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        if self.grid.ndim != 3 or self.grid.shape[2] != 3:
            raise GeometryError("organized cloud grid must be H x W x 3")

    @property
    def valid_mask(self) -> np.ndarray:
        return ~np.isnan(self.grid[:, :, 2])

    @property
    def shape(self):
        return self.grid.shape[:2]


def backproject(depth: np.ndarray, intr: CameraIntrinsics) -> OrganizedCloud:
    """Backproject a depth image into an organized cloud in the camera frame.

    Pixel (u, v) with depth z maps to ((u - cx) * z / fx, (v - cy) * z / fy, z).
    Depth 0 marks invalid pixels; those grid entries are NaN.
    """
    depth = np.asarray(depth, dtype=float)
    if depth.shape != (intr.height, intr.width):
        raise GeometryError(
            f"depth shape {depth.shape} does not match intrinsics "
            f"({intr.height}, {intr.width})"
        )
    if np.any(depth < 0):
        raise GeometryError("depth values must be >= 0 (0 = invalid)")
    us = np.arange(intr.width, dtype=float)
    vs = np.arange(intr.height, dtype=float)
    uu, vv = np.meshgrid(us, vs)
    grid = np.empty((intr.height, intr.width, 3), dtype=float)
    grid[:, :, 0] = (uu - intr.cx) * depth / intr.fx
    grid[:, :, 1] = (vv - intr.cy) * depth / intr.fy
    grid[:, :, 2] = depth
    grid[depth == 0.0] = np.nan
    return OrganizedCloud(grid)


def angles_to_frame(a: RotationAngles) -> tuple[np.ndarray, np.ndarray]:
    """Build the (approach n, axis r) orthonormal pair for a rotation triple.

    n = (cos t2 cos t1, cos t2 sin t1, -sin t2); r is the unit vector
    proportional to (cos t3, sin t3, k) with k chosen so n . r = 0. At
    t2 = pi/2 (vertical approach) k = 0 exactly. At t2 = 0 the pair only
    exists when the x-y projection of r can be perpendicular to n, i.e.
    cos(t1 - t3) = 0; other combinations raise.
    """
    c2, s2 = np.cos(a.theta2), np.sin(a.theta2)
    n = np.array([c2 * np.cos(a.theta1), c2 * np.sin(a.theta1), -s2])
    cross = np.cos(a.theta1 - a.theta3)
    if s2 < 1e-12:
        if abs(cross) > 1e-9:
            raise GeometryError(
                "theta2=0 requires theta3 perpendicular to theta1 (cos(t1-t3)=0)"
            )
        k = 0.0
    else:
        k = c2 * cross / s2
    r = normalize(np.array([np.cos(a.theta3), np.sin(a.theta3), k]))
    return n, r


def angles_to_direction(a: RotationAngles) -> np.ndarray:
    """Approach vector n alone (for direction-only configurations such as
    suction, where theta3 is canonical filler)."""
    c2 = np.cos(a.theta2)
    return np.array([c2 * np.cos(a.theta1), c2 * np.sin(a.theta1), -np.sin(a.theta2)])


def frame_to_angles(n: np.ndarray, r: np.ndarray) -> RotationAngles:
    """Invert angles_to_frame.

    Requires |n . r| <= 1e-6 and a non-upward approach (n_z <= 0). For a
    vertical approach (n_z = -1) theta1 is undefined and canonicalized to 0.
    """
    n = np.asarray(n, dtype=float)
    r = np.asarray(r, dtype=float)
    if not is_unit(n, 1e-6) or not is_unit(r, 1e-6):
        raise GeometryError("n and r must be unit vectors")
    if abs(float(np.dot(n, r))) > 1e-6:
        raise GeometryError("n and r must be orthogonal (|n.r| <= 1e-6)")
    if n[2] > 1e-9:
        raise GeometryError("approach vector points upward (theta2 out of [0, pi/2])")
    theta2 = float(np.arcsin(np.clip(-n[2], 0.0, 1.0)))
    if abs(np.cos(theta2)) < 1e-9:
        theta1 = 0.0
    else:
        theta1 = float(np.arctan2(n[1], n[0])) % TWO_PI
    rho = np.hypot(r[0], r[1])
    if rho < 1e-12:
        raise GeometryError("grasp axis has no x-y projection; theta3 undefined")
    theta3 = float(np.arctan2(r[1], r[0]))
    return RotationAngles(theta1, theta2, theta3)


def estimate_normals(
    cloud: PointCloud, k: int, view_point=(0.0, 0.0, 0.0)
) -> PointCloud:
    """Per-point normals from a least-squares plane over k nearest neighbors.

    Normals are oriented toward view_point (the sensor origin). Degenerate
    neighborhoods (collinear points) get NaN normals instead of raising.
    """
    pts = cloud.points
    if k < 3:
        raise GeometryError("k must be >= 3")
    if len(pts) < k:
        raise GeometryError(f"cloud has {len(pts)} points, need at least k={k}")
    view = np.asarray(view_point, dtype=float)
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k)
    neigh = pts[idx]  # (N, k, 3)
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    eigvals, eigvecs = np.linalg.eigh(cov)
    normals = eigvecs[:, :, 0]  # eigenvector of smallest eigenvalue
    # Collinear neighborhood: two vanishing eigenvalues relative to the spread.
    scale = np.maximum(eigvals[:, 2], 1e-300)
    degenerate = eigvals[:, 1] / scale < 1e-9
    flip = np.einsum("ni,ni->n", normals, view[None, :] - pts) < 0
    normals[flip] *= -1.0
    normals[degenerate] = np.nan
    return PointCloud(points=pts.copy(), normals=normals)
