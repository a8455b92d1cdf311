"""Analytic seal-formation scoring of suction candidates.

The cup ring is projected along the approach direction onto the target
surface; a least-squares plane through the projected ring yields a planarity
spread sigma, and the score is exp(-b * sigma) * cos(M, M1) where M opposes
the fitted plane normal and M1 is the approach. A swept-cylinder proxy
checks the approach path for collisions with the rest of the scene.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import SuctionConfig
from .geometry import GeometryError, PointCloud, RotationAngles, normalize
from .meshes import TriMesh, raycast_batch, raycast_groups
from .scene import ObjectInstance, SceneModel, points_to_object, raycast_scene

DEFAULT_THRESHOLD = 0.5
_RING_BACKOFF = 0.05


class DegenerateGeometry(GeometryError):
    """Plane fitting failed (collinear or coincident points)."""


@dataclass(frozen=True)
class SuctionCupModel:
    """Silicone cup: ring radius, ring discretization, seal decay constant b
    (per meter of sigma), and the swept length of the collision proxy."""

    radius: float = 0.01
    ring_samples: int = 16
    compliance_b: float = 200.0
    approach_length: float = 0.02

    def __post_init__(self):
        if self.radius <= 0:
            raise GeometryError("cup radius must be > 0")
        if self.ring_samples < 3:
            raise GeometryError("need at least 3 ring samples")
        if self.compliance_b <= 0:
            raise GeometryError("compliance constant b must be > 0")


@dataclass
class SealEvaluation:
    """Outcome of one seal-formation evaluation."""

    ring_points: np.ndarray | None
    plane_point: np.ndarray | None
    plane_normal_m: np.ndarray | None  # M, opposing the fitted plane normal
    sigma: float
    score: float
    failed: bool


def _ring_basis(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = normalize(direction)
    helper = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = normalize(np.cross(helper, d))
    e2 = np.cross(d, e1)
    return e1, e2


def ring_rays(
    contact, direction, cup: SuctionCupModel, backoff: float = _RING_BACKOFF
) -> tuple[np.ndarray, np.ndarray]:
    """Ray origins/directions for the cup ring, pulled back off the surface."""
    contact = np.asarray(contact, dtype=float)
    d = normalize(direction)
    e1, e2 = _ring_basis(d)
    phi = 2.0 * np.pi * np.arange(cup.ring_samples) / cup.ring_samples
    offsets = cup.radius * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)
    origins = contact + offsets - backoff * d
    dirs = np.tile(d, (cup.ring_samples, 1))
    return origins, dirs


def ring_rays_batch(
    contacts: np.ndarray, directions: np.ndarray, cup: SuctionCupModel, backoff: float = _RING_BACKOFF
) -> tuple[np.ndarray, np.ndarray]:
    """ring_rays over many candidates at once: returns (N * n_ring, 3) rays
    grouped candidate-major."""
    contacts = np.asarray(contacts, dtype=float).reshape(-1, 3)
    d = np.asarray(directions, dtype=float).reshape(-1, 3)
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    # basis: helper is z unless the direction is nearly vertical
    helper = np.where(np.abs(d[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
    e1 = np.stack(
        [
            helper[:, 1] * d[:, 2] - helper[:, 2] * d[:, 1],
            helper[:, 2] * d[:, 0] - helper[:, 0] * d[:, 2],
            helper[:, 0] * d[:, 1] - helper[:, 1] * d[:, 0],
        ],
        axis=1,
    )
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.stack(
        [
            d[:, 1] * e1[:, 2] - d[:, 2] * e1[:, 1],
            d[:, 2] * e1[:, 0] - d[:, 0] * e1[:, 2],
            d[:, 0] * e1[:, 1] - d[:, 1] * e1[:, 0],
        ],
        axis=1,
    )
    phi = 2.0 * np.pi * np.arange(cup.ring_samples) / cup.ring_samples
    offsets = cup.radius * (
        np.cos(phi)[None, :, None] * e1[:, None, :] + np.sin(phi)[None, :, None] * e2[:, None, :]
    )  # (N, R, 3)
    origins = contacts[:, None, :] + offsets - backoff * d[:, None, :]
    dirs = np.broadcast_to(d[:, None, :], origins.shape)
    return origins.reshape(-1, 3), dirs.reshape(-1, 3).copy()


def _cast(target, origins, dirs) -> np.ndarray:
    """Nearest-hit parameters against a SceneModel, ObjectInstance, or TriMesh."""
    if isinstance(target, SceneModel):
        return raycast_scene(target, origins, dirs).t
    mesh = target.mesh() if isinstance(target, ObjectInstance) else target
    if not isinstance(mesh, TriMesh):
        raise TypeError(f"cannot raycast against {type(target).__name__}")
    t, _ = raycast_batch(mesh, origins, dirs)
    return t


def project_ring(target, contact, direction, cup: SuctionCupModel) -> np.ndarray | None:
    """Project the cup ring onto the target surface along the approach.

    Returns the n contact-ring points, or None when any ring ray misses
    (no seal is possible at this pose).
    """
    origins, dirs = ring_rays(contact, direction, cup)
    t = _cast(target, origins, dirs)
    if not np.all(np.isfinite(t)):
        return None
    return origins + t[:, None] * dirs


def fit_plane_lsq(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares plane (centroid, unit normal) minimizing squared
    orthogonal distances. Raises DegenerateGeometry for collinear points.

    The normal's sign is arbitrary; callers orient it."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) < 3:
        raise DegenerateGeometry("plane fit needs at least 3 points")
    centroid = points.mean(axis=0)
    centered = points - centroid
    cov = centered.T @ centered
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[1] <= 1e-12 * max(eigvals[2], 1e-300):
        raise DegenerateGeometry("ring points are collinear; plane is not unique")
    return centroid, eigvecs[:, 0]


def seal_sigma(ring_points: np.ndarray, plane_point, plane_normal) -> float:
    """Population standard deviation of signed ring-to-plane distances."""
    d = (np.asarray(ring_points, dtype=float) - np.asarray(plane_point, dtype=float)) @ normalize(
        plane_normal
    )
    return float(np.sqrt(np.mean((d - d.mean()) ** 2)))


def suction_score(sigma: float, m, m1, b: float) -> float:
    """exp(-b * sigma) * cos(M, M1), clamped to 0 for opposing directions."""
    if b <= 0:
        raise GeometryError("b must be > 0")
    cos = float(np.dot(normalize(m), normalize(m1)))
    return float(np.exp(-b * sigma) * min(max(cos, 0.0), 1.0))


def evaluate_seal(target, contact, direction, cup: SuctionCupModel) -> SealEvaluation:
    """Full ring -> plane -> sigma -> score pipeline for one candidate."""
    ring = project_ring(target, contact, direction, cup)
    if ring is None:
        return SealEvaluation(None, None, None, np.inf, 0.0, failed=True)
    try:
        plane_point, plane_normal = fit_plane_lsq(ring)
    except DegenerateGeometry:
        return SealEvaluation(ring, None, None, np.inf, 0.0, failed=True)
    d = normalize(direction)
    # Orient the fitted normal outward (against the approach); M opposes it.
    if float(np.dot(plane_normal, d)) > 0:
        plane_normal = -plane_normal
    m = -plane_normal
    sigma = seal_sigma(ring, plane_point, plane_normal)
    return SealEvaluation(
        ring_points=ring,
        plane_point=plane_point,
        plane_normal_m=m,
        sigma=sigma,
        score=suction_score(sigma, m, d, cup.compliance_b),
        failed=False,
    )


def _axis_samples(contact, direction, cup: SuctionCupModel, n: int = 11) -> np.ndarray:
    contact = np.asarray(contact, dtype=float)
    d = normalize(direction)
    s = np.linspace(0.0, cup.approach_length, n)
    return contact - s[:, None] * d


def approach_collides(
    scene: SceneModel, contact, direction, cup: SuctionCupModel, exclude_id: int
) -> bool:
    """Swept-cylinder collision proxy: cup radius around the approach axis,
    approach_length long, tested against every other object and the table."""
    pts = _axis_samples(contact, direction, cup)
    d = normalize(direction)
    z_extent = cup.radius * float(np.sqrt(max(0.0, 1.0 - d[2] ** 2)))
    if np.any(pts[:, 2] - z_extent < -1e-6):
        return True
    for obj in scene.objects:
        if obj.object_id == exclude_id:
            continue
        if np.min(points_to_object(pts, obj)) < cup.radius - 1e-9:
            return True
    return False


def _direction_angles(direction: np.ndarray) -> RotationAngles | None:
    """Rotation triple for an approach direction (theta3 canonicalized to 0).
    Returns None for upward-pointing approaches, which are unreachable."""
    d = normalize(direction)
    if d[2] > 1e-9:
        return None
    theta2 = float(np.arcsin(np.clip(-d[2], 0.0, 1.0)))
    theta1 = 0.0 if abs(np.cos(theta2)) < 1e-9 else float(np.arctan2(d[1], d[0])) % (2 * np.pi)
    return RotationAngles(theta1, theta2, 0.0)


def _owner_ids(scene: SceneModel, points: np.ndarray) -> np.ndarray:
    """Nearest-object id per point; -1 when no surface is within 1e-6."""
    ids = np.full(len(points), -1, dtype=np.int64)
    best = np.full(len(points), 1e-6)
    for obj in scene.objects:
        d = np.abs(points_to_object(points, obj))
        closer = d < best
        ids[closer] = obj.object_id
        best[closer] = d[closer]
    return ids


def label_contact_points(
    scene: SceneModel,
    candidates: PointCloud,
    cup: SuctionCupModel,
    threshold: float = DEFAULT_THRESHOLD,
    object_ids=None,
) -> tuple[list[SuctionConfig], list[SuctionConfig]]:
    """Score candidate contact points and split them by the labeling rule:
    positive iff the seal score exceeds the threshold and the approach is
    collision-free; everything else (including failed seals and unreachable
    approaches) is negative.

    The approach direction is the negated surface normal; the seal is
    evaluated against the candidate's own object.
    """
    if candidates.normals is None:
        raise GeometryError("candidates need normals")
    pts = candidates.points
    if object_ids is None:
        object_ids = _owner_ids(scene, pts)
    object_ids = np.asarray(object_ids)
    positives: list[SuctionConfig] = []
    negatives: list[SuctionConfig] = []
    for p, n, oid in zip(pts, candidates.normals, object_ids):
        cfg = _score_candidate(scene, p, n, int(oid), cup, threshold)
        (positives if cfg[1] else negatives).append(cfg[0])
    return positives, negatives


def _score_candidate(scene, point, normal, oid, cup, threshold):
    if oid < 0 or np.any(np.isnan(normal)):
        return SuctionConfig(point, RotationAngles(0, 0, 0), 0.0, max(oid, 0)), False
    direction = -np.asarray(normal, dtype=float)
    angles = _direction_angles(direction)
    if angles is None:
        return SuctionConfig(point, RotationAngles(0, 0, 0), 0.0, oid), False
    seal = evaluate_seal(scene.get(oid), point, direction, cup)
    cfg = SuctionConfig(point, angles, min(seal.score, 1.0), oid)
    if seal.failed or seal.score <= threshold:
        return cfg, False
    if approach_collides(scene, point, direction, cup, exclude_id=oid):
        return cfg, False
    return cfg, True


def batch_approach_collisions(
    scene: SceneModel,
    contacts: np.ndarray,
    directions: np.ndarray,
    cup: SuctionCupModel,
    exclude_id: int,
    n_axis: int = 11,
) -> np.ndarray:
    """Vectorized approach_collides over many candidates of one object."""
    contacts = np.asarray(contacts, dtype=float).reshape(-1, 3)
    directions = np.asarray(directions, dtype=float).reshape(-1, 3)
    n = len(contacts)
    if n == 0:
        return np.zeros(0, dtype=bool)
    d = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    s = np.linspace(0.0, cup.approach_length, n_axis)
    pts = contacts[:, None, :] - s[None, :, None] * d[:, None, :]  # (N, S, 3)
    z_extent = cup.radius * np.sqrt(np.maximum(0.0, 1.0 - d[:, 2] ** 2))
    collide = np.any(pts[:, :, 2] - z_extent[:, None] < -1e-6, axis=1)
    reach = cup.approach_length + cup.radius + 1e-6
    for obj in scene.objects:
        if obj.object_id == exclude_id:
            continue
        lo, hi = obj.aabb()
        near = np.all(contacts >= lo - reach, axis=1) & np.all(contacts <= hi + reach, axis=1)
        near &= ~collide
        if not near.any():
            continue
        idx = np.nonzero(near)[0]
        dist = points_to_object(pts[idx].reshape(-1, 3), obj).reshape(len(idx), n_axis)
        collide[idx] |= dist.min(axis=1) < cup.radius - 1e-9
    return collide


def object_suction_candidates(
    obj: ObjectInstance, cup: SuctionCupModel, count: int, seed: int
) -> tuple[list[SuctionConfig], np.ndarray]:
    """Seal-scored candidates on one object, ignoring the rest of the scene.

    Samples the reachable surface (outward normal not pointing down), runs
    the full ring pipeline against the object's own mesh, and returns the
    scored configs plus their approach directions. Scores here are intrinsic
    (no collision checks); candidates whose approach would point upward are
    dropped as unreachable.
    """
    from .meshes import sample_surface

    rng = np.random.default_rng([seed, obj.object_id, 1])
    mesh = obj.mesh()
    mask = mesh.face_normals()[:, 2] >= -1e-9
    if not mask.any() or count < 1:
        return [], np.zeros((0, 3))
    pts, normals = sample_surface(mesh, count, rng, faces_mask=mask)
    dirs = -normals
    n_ring = cup.ring_samples
    origins, ray_dirs = ring_rays_batch(pts, dirs, cup)
    t, _ = raycast_groups(mesh, origins, ray_dirs, group=n_ring)
    t = t.reshape(count, n_ring)
    configs: list[SuctionConfig] = []
    kept_dirs = []
    for i in range(count):
        if not np.all(np.isfinite(t[i])):
            continue
        angles = _direction_angles(dirs[i])
        if angles is None:
            continue
        ring = origins[i * n_ring : (i + 1) * n_ring] + t[i][:, None] * ray_dirs[
            i * n_ring : (i + 1) * n_ring
        ]
        try:
            plane_point, plane_normal = fit_plane_lsq(ring)
        except DegenerateGeometry:
            continue
        if float(np.dot(plane_normal, dirs[i])) > 0:
            plane_normal = -plane_normal
        sigma = seal_sigma(ring, plane_point, plane_normal)
        score = suction_score(sigma, -plane_normal, dirs[i], cup.compliance_b)
        configs.append(SuctionConfig(pts[i], angles, min(score, 1.0), obj.object_id))
        kept_dirs.append(dirs[i])
    return configs, np.asarray(kept_dirs).reshape(-1, 3)


def annotate_scene_suction(
    scene: SceneModel,
    cup: SuctionCupModel = SuctionCupModel(),
    threshold: float = DEFAULT_THRESHOLD,
    sample_count: int = 512,
    seed: int | None = None,
    candidate_cache: dict | None = None,
    counts_by_object: dict | None = None,
) -> list[SuctionConfig]:
    """Dense suction annotation: area-weighted surface candidates per object,
    positives (seal score above threshold, collision-free approach) only,
    canonically ordered (object id, score descending).

    candidate_cache, keyed by object pose, memoizes the per-object seal
    evaluations across repeated calls on evolving scenes; collision checks
    always run against the current scene. counts_by_object pins per-object
    sample counts (callers that reuse the cache across object removals pass
    counts frozen on the initial scene).
    """
    if not scene.objects:
        return []
    base_seed = scene.seed if seed is None else seed
    if counts_by_object is None:
        areas = np.array([o.mesh().face_areas().sum() for o in scene.objects])
        shares = np.maximum(1, np.round(sample_count * areas / areas.sum()).astype(int))
        counts = [int(k) for k in shares]
    else:
        counts = [int(counts_by_object[o.object_id]) for o in scene.objects]
    positives: list[SuctionConfig] = []
    for obj, k in zip(scene.objects, counts):
        key = ("suction", obj.object_id, obj.x, obj.y, obj.yaw, int(k))
        if candidate_cache is not None and key in candidate_cache:
            configs, dirs = candidate_cache[key]
        else:
            configs, dirs = object_suction_candidates(obj, cup, int(k), base_seed)
            if candidate_cache is not None:
                candidate_cache[key] = (configs, dirs)
        if not configs:
            continue
        good = [i for i, c in enumerate(configs) if c.score > threshold]
        if not good:
            continue
        collide = batch_approach_collisions(
            scene,
            np.array([configs[i].contact for i in good]),
            dirs[good],
            cup,
            exclude_id=obj.object_id,
        )
        positives.extend(configs[i] for i, hit in zip(good, collide) if not hit)
    positives.sort(
        key=lambda s: (s.object_id, -s.score, s.contact[0], s.contact[1], s.contact[2])
    )
    return positives
