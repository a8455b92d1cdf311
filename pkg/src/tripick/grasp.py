"""Parallel-jaw contact finding and Ferrari-Canny force-closure labeling.

Contacts are hard point contacts with Coulomb friction. Quality is the
radius of the largest origin-centered ball inside the convex hull of the
discretized unit contact wrenches (force, torque about the object centroid
scaled by the bounding-sphere radius, jointly normalized to unit 6D norm),
which bounds it to [0, 1]. Torque about the grasp axis is irresistible for
any two point contacts, so the hull ball is measured in the 5D complement
of that direction (see resistible_basis).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .codec import GRIPPER_MAX_WIDTH, GraspConfig
from .geometry import GeometryError, angles_to_frame, frame_to_angles, normalize
from .meshes import raycast_batch, sample_surface
from .scene import SceneModel, points_to_object, raycast_scene

FINGER_LENGTH = 0.04
FINGER_RADIUS = 0.006
WIDTH_CLEARANCE = 0.005


@dataclass(frozen=True)
class FrictionModel:
    mu: float = 0.5
    cone_facets: int = 8

    def __post_init__(self):
        if self.mu <= 0:
            raise GeometryError("friction coefficient must be > 0")
        if self.cone_facets < 3:
            raise GeometryError("need at least 3 cone facets")


@dataclass
class ContactPair:
    """Two finger contacts on one object, with inward unit normals."""

    p1: np.ndarray
    p2: np.ndarray
    n1: np.ndarray
    n2: np.ndarray
    object_id: int
    centroid: np.ndarray | None = None
    char_radius: float | None = None

    def __post_init__(self):
        self.p1 = np.asarray(self.p1, dtype=float).reshape(3)
        self.p2 = np.asarray(self.p2, dtype=float).reshape(3)
        self.n1 = normalize(self.n1)
        self.n2 = normalize(self.n2)
        if np.linalg.norm(self.p1 - self.p2) > GRIPPER_MAX_WIDTH + 1e-9:
            raise GeometryError("contact separation exceeds the gripper opening")


def _tangent_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    t1 = normalize(np.cross(helper, n))
    return t1, np.cross(n, t1)


def friction_cone(normal_inward: np.ndarray, fm: FrictionModel) -> np.ndarray:
    """Unit force directions on the boundary of the discretized cone."""
    n = normalize(normal_inward)
    t1, t2 = _tangent_basis(n)
    beta = np.arctan(fm.mu)
    phi = 2.0 * np.pi * np.arange(fm.cone_facets) / fm.cone_facets
    return (
        np.cos(beta) * n[None, :]
        + np.sin(beta) * (np.cos(phi)[:, None] * t1 + np.sin(phi)[:, None] * t2)
    )


def contact_wrenches(pair: ContactPair, fm: FrictionModel) -> np.ndarray:
    """(2 * cone_facets, 6) unit wrenches about the object centroid.

    Each cone-boundary force contributes [f, (p - c) x f / rho] scaled to
    unit 6D norm. The per-wrench normalization is what gives the hull of a
    two-contact grasp full dimension (the raw wrenches of each cone lie on
    a planar ellipse) and bounds the quality ball by 1.
    """
    c = pair.centroid if pair.centroid is not None else (pair.p1 + pair.p2) / 2.0
    rho = pair.char_radius
    if rho is None:
        rho = max(np.linalg.norm(pair.p1 - c), np.linalg.norm(pair.p2 - c), 1e-6)
    rows = []
    for p, n in ((pair.p1, pair.n1), (pair.p2, pair.n2)):
        forces = friction_cone(n, fm)
        torques = np.cross(np.tile(p - c, (len(forces), 1)), forces) / rho
        w = np.hstack([forces, torques])
        rows.append(w / np.linalg.norm(w, axis=1, keepdims=True))
    return np.vstack(rows)


def resistible_basis(pair: ContactPair) -> np.ndarray:
    """Orthonormal basis (6 x 5) of the wrench subspace a two-point grasp can
    resist.

    Two hard point contacts can never produce torque about the line through
    the contacts (any zero-net-force combination torques perpendicular to
    it), so the 6D wrench hull of such a grasp is always flat along that
    direction and quality is measured in the 5D complement.
    """
    axis = pair.p2 - pair.p1
    norm = np.linalg.norm(axis)
    if norm < 1e-9:
        raise GeometryError("coincident contacts have no grasp axis")
    u = np.concatenate([np.zeros(3), axis / norm])
    basis = np.linalg.svd(np.eye(6) - np.outer(u, u))[0][:, :5]
    return basis


def ferrari_canny(pair: ContactPair, fm: FrictionModel = FrictionModel()) -> float:
    """Largest origin-centered ball radius inside the wrench hull, in [0, 1];
    0 when the grasp lacks force closure or the hull is degenerate.

    The hull is taken in the 5D resistible subspace (see resistible_basis)
    since the full 6D hull of two point contacts is always degenerate.
    """
    if np.linalg.norm(pair.p2 - pair.p1) < 1e-9:
        return 0.0
    w = contact_wrenches(pair, fm) @ resistible_basis(pair)
    try:
        hull = ConvexHull(w)
    except QhullError:
        return 0.0
    offsets = -hull.equations[:, -1]  # distance of each facet plane from origin
    quality = float(offsets.min())
    if quality <= 1e-12:
        return 0.0
    return min(quality, 1.0)


def _gripper_body_points(center, n_app, r_axis, width) -> np.ndarray:
    """Sample points on the two fingers and the palm bar for collision tests."""
    tips = [center + 0.5 * width * r_axis, center - 0.5 * width * r_axis]
    pts = []
    for tip in tips:
        s = np.linspace(0.0, FINGER_LENGTH, 6)
        pts.append(tip[None, :] - s[:, None] * n_app[None, :])
    top1 = tips[0] - FINGER_LENGTH * n_app
    top2 = tips[1] - FINGER_LENGTH * n_app
    lam = np.linspace(0.0, 1.0, 5)[:, None]
    pts.append(top1[None, :] * (1 - lam) + top2[None, :] * lam)
    return np.vstack(pts)


def gripper_collides(scene: SceneModel, center, n_app, r_axis, width, exclude_id: int) -> bool:
    pts = _gripper_body_points(np.asarray(center, float), n_app, r_axis, width)
    if np.any(pts[:, 2] < -1e-6):
        return True
    for obj in scene.objects:
        if obj.object_id == exclude_id:
            continue
        if np.min(points_to_object(pts, obj)) < FINGER_RADIUS - 1e-9:
            return True
    return False


def find_contacts(scene: SceneModel, g: GraspConfig) -> ContactPair | None:
    """Close the jaws along the grasp axis from the grasp center.

    Both finger rays must first hit the same object, the contact separation
    must fit the commanded width, and the gripper body must clear all other
    objects; otherwise the grasp is infeasible and None is returned.
    """
    n_app, r_axis = angles_to_frame(g.angles)
    origins = np.array([g.center, g.center])
    dirs = np.array([r_axis, -r_axis])
    hits = raycast_scene(scene, origins, dirs)
    if hits.object_id[0] < 0 or hits.object_id[0] != hits.object_id[1]:
        return None
    oid = int(hits.object_id[0])
    p1 = origins[0] + hits.t[0] * dirs[0]
    p2 = origins[1] + hits.t[1] * dirs[1]
    separation = float(np.linalg.norm(p1 - p2))
    if separation > g.width + 1e-9 or separation > GRIPPER_MAX_WIDTH + 1e-9:
        return None
    if gripper_collides(scene, g.center, n_app, r_axis, g.width, exclude_id=oid):
        return None
    obj = scene.get(oid)
    centroid = obj.centroid()
    char_radius = float(np.max(np.linalg.norm(obj.mesh().vertices - centroid, axis=1)))
    return ContactPair(
        p1=p1,
        p2=p2,
        n1=-hits.normal[0],
        n2=-hits.normal[1],
        object_id=oid,
        centroid=centroid,
        char_radius=char_radius,
    )


def batch_gripper_collisions(
    scene: SceneModel,
    centers: np.ndarray,
    n_apps: np.ndarray,
    r_axes: np.ndarray,
    widths: np.ndarray,
    exclude_id: int,
) -> np.ndarray:
    """Vectorized gripper_collides over many candidates of one object."""
    n = len(centers)
    if n == 0:
        return np.zeros(0, dtype=bool)
    pts = np.stack(
        [
            _gripper_body_points(centers[i], n_apps[i], r_axes[i], widths[i])
            for i in range(n)
        ]
    )  # (N, P, 3)
    collide = np.any(pts[:, :, 2] < -1e-6, axis=1)
    reach = FINGER_LENGTH + GRIPPER_MAX_WIDTH + FINGER_RADIUS
    for obj in scene.objects:
        if obj.object_id == exclude_id:
            continue
        lo, hi = obj.aabb()
        near = np.all(centers >= lo - reach, axis=1) & np.all(centers <= hi + reach, axis=1)
        near &= ~collide
        if not near.any():
            continue
        idx = np.nonzero(near)[0]
        dist = points_to_object(pts[idx].reshape(-1, 3), obj).reshape(len(idx), -1)
        collide[idx] |= dist.min(axis=1) < FINGER_RADIUS - 1e-9
    return collide


def object_grasp_candidates(
    obj, fm: FrictionModel, count: int, seed: int
) -> tuple[list[GraspConfig], np.ndarray, np.ndarray]:
    """Force-closure grasp candidates on one object, ignoring the rest of
    the scene: antipodal chords from surface samples, validated against the
    object's own mesh and quality-scored. Returns (configs, approach
    vectors, grasp axes) for downstream collision filtering."""
    rng = np.random.default_rng([seed, obj.object_id, 2])
    mesh = obj.mesh()
    mask = mesh.face_normals()[:, 2] >= -1e-9
    if not mask.any() or count < 1:
        return [], np.zeros((0, 3)), np.zeros((0, 3))
    pts, normals = sample_surface(mesh, count, rng, faces_mask=mask)
    dirs = -normals
    origins = pts + 1e-6 * dirs
    t, hit_faces = raycast_batch(mesh, origins, dirs)
    face_normals = mesh.face_normals()
    centroid = obj.centroid()
    char_radius = float(np.max(np.linalg.norm(mesh.vertices - centroid, axis=1)))
    down = np.array([0.0, 0.0, -1.0])
    configs: list[GraspConfig] = []
    n_apps = []
    r_axes = []
    for i in range(count):
        if not np.isfinite(t[i]):
            continue
        p2 = origins[i] + t[i] * dirs[i]
        separation = float(np.linalg.norm(p2 - pts[i]))
        if separation < 1e-4 or separation > GRIPPER_MAX_WIDTH - WIDTH_CLEARANCE:
            continue
        r_axis = (p2 - pts[i]) / separation
        if abs(r_axis[2]) > 0.95:
            continue  # top-bottom chords: no usable side approach
        n_app = down - np.dot(down, r_axis) * r_axis
        norm = np.linalg.norm(n_app)
        if norm < 1e-6:
            continue
        n_app /= norm
        width = min(separation + WIDTH_CLEARANCE, GRIPPER_MAX_WIDTH)
        try:
            angles = frame_to_angles(n_app, r_axis)
        except (GeometryError, ValueError):
            continue
        pair = ContactPair(
            p1=pts[i], p2=p2,
            n1=dirs[i],                        # inward at the sample point
            n2=-face_normals[hit_faces[i]],    # inward at the exit face
            object_id=obj.object_id, centroid=centroid, char_radius=char_radius,
        )
        quality = ferrari_canny(pair, fm)
        if quality <= 0.0:
            continue
        configs.append(
            GraspConfig(
                center=(pts[i] + p2) / 2.0,
                angles=angles,
                width=width,
                score=quality,
                object_id=obj.object_id,
            )
        )
        n_apps.append(n_app)
        r_axes.append(r_axis)
    return configs, np.asarray(n_apps).reshape(-1, 3), np.asarray(r_axes).reshape(-1, 3)


def annotate_scene_grasps(
    scene: SceneModel,
    sample_count: int = 512,
    fm: FrictionModel = FrictionModel(),
    seed: int | None = None,
    candidate_cache: dict | None = None,
    counts_by_object: dict | None = None,
) -> list[GraspConfig]:
    """Antipodal candidates from surface point pairs, Ferrari-Canny scored;
    only collision-free force-closure grasps are kept. Deterministic for a
    fixed seed. candidate_cache and counts_by_object work as in
    annotate_scene_suction."""
    if not scene.objects:
        return []
    base_seed = scene.seed if seed is None else seed
    if counts_by_object is None:
        areas = np.array([o.mesh().face_areas().sum() for o in scene.objects])
        shares = np.maximum(1, np.round(sample_count * areas / areas.sum()).astype(int))
        counts = [int(k) for k in shares]
    else:
        counts = [int(counts_by_object[o.object_id]) for o in scene.objects]
    out: list[GraspConfig] = []
    for obj, k in zip(scene.objects, counts):
        key = ("grasp", obj.object_id, obj.x, obj.y, obj.yaw, int(k))
        if candidate_cache is not None and key in candidate_cache:
            configs, n_apps, r_axes = candidate_cache[key]
        else:
            configs, n_apps, r_axes = object_grasp_candidates(obj, fm, int(k), base_seed)
            if candidate_cache is not None:
                candidate_cache[key] = (configs, n_apps, r_axes)
        if not configs:
            continue
        collide = batch_gripper_collisions(
            scene,
            np.array([g.center for g in configs]),
            n_apps,
            r_axes,
            np.array([g.width for g in configs]),
            exclude_id=obj.object_id,
        )
        out.extend(g for g, hit in zip(configs, collide) if not hit)
    out.sort(key=lambda g: (g.object_id, -g.score, g.center[0], g.center[1], g.center[2]))
    return out
