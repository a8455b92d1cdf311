"""Instance segmentation without the network: reference losses for the
foreground and center-offset heads, and mean-shift clustering of per-pixel
center votes into instance labels.

Votes live in 3D camera coordinates; every foreground pixel votes for its
object's centroid via an offset field V (vote = point + offset).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import OrganizedCloud, backproject
from .scene import CameraModel, SceneModel, render_depth

_PROB_EPS = 1e-7
HUBER_DELTA = 0.01


class SegmentationError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda_fg: float = 1.0
    lambda_co: float = 1.0

    def __post_init__(self):
        if self.lambda_fg < 0 or self.lambda_co < 0:
            raise SegmentationError("loss weights must be >= 0")


@dataclass(frozen=True)
class MeanShiftParams:
    bandwidth: float = 0.03
    max_iter: int = 100
    tol: float = 1e-5
    min_cluster_px: int = 50


def foreground_loss(pred_probs: np.ndarray, gt: np.ndarray) -> float:
    """Class-balanced binary cross entropy over the image.

    Per-pixel weights are inversely proportional to that pixel's ground-truth
    class population and normalized to sum to 1; an all-one-class image falls
    back to uniform weights.
    """
    pred = np.clip(np.asarray(pred_probs, dtype=float), _PROB_EPS, 1.0 - _PROB_EPS)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise SegmentationError("prediction/ground-truth shapes differ")
    fg = gt.astype(bool)
    n_fg, n_bg = int(fg.sum()), int((~fg).sum())
    w = np.empty(pred.shape, dtype=float)
    if n_fg == 0 or n_bg == 0:
        w.fill(1.0 / gt.size)
    else:
        w[fg] = 1.0 / n_fg
        w[~fg] = 1.0 / n_bg
        w /= w.sum()
    ce = -np.where(fg, np.log(pred), np.log(1.0 - pred))
    return float((w * ce).sum())


def huber(r: float, delta: float = HUBER_DELTA) -> float:
    """Smooth-L1: quadratic 0.5 r^2 / delta below delta, linear r - delta/2
    above; continuously differentiable at the branch point."""
    r = abs(float(r))
    if r <= delta:
        return 0.5 * r * r / delta
    return r - 0.5 * delta


def center_offset_loss(
    organized,
    votes: np.ndarray,
    instance_map: np.ndarray,
    centers: dict,
    delta: float = HUBER_DELTA,
) -> float:
    """Instance-balanced Huber penalty on vote-to-center distances over the
    foreground. Weights are inversely proportional to the pixel count of the
    pixel's instance, normalized to sum to 1."""
    grid = organized.grid if isinstance(organized, OrganizedCloud) else np.asarray(organized)
    votes = np.asarray(votes, dtype=float)
    labels = np.asarray(instance_map)
    if grid.shape[:2] != votes.shape[:2] or grid.shape[:2] != labels.shape:
        raise SegmentationError("grid, votes, and instance map shapes differ")
    ids, counts = np.unique(labels[labels > 0], return_counts=True)
    if len(ids) == 0:
        return 0.0
    missing = [int(i) for i in ids if i not in centers]
    if missing:
        raise SegmentationError(f"foreground instances without centers: {missing}")
    inv = {int(i): 1.0 / c for i, c in zip(ids, counts)}
    total_w = sum(inv[int(i)] * c for i, c in zip(ids, counts))  # = number of instances
    loss = 0.0
    for i in ids:
        mask = labels == i
        pred_centers = grid[mask] + votes[mask]
        residuals = np.linalg.norm(pred_centers - np.asarray(centers[int(i)], dtype=float), axis=1)
        w = inv[int(i)] / total_w
        loss += w * sum(huber(r, delta) for r in residuals)
    return float(loss)


def nonpre_loss(l_fg: float, l_co: float, w: LossWeights = LossWeights()) -> float:
    if l_fg < 0 or l_co < 0 or not (np.isfinite(l_fg) and np.isfinite(l_co)):
        raise SegmentationError("loss terms must be finite and >= 0")
    return w.lambda_fg * l_fg + w.lambda_co * l_co


# ---------------------------------------------------------------------------
# Mean-shift clustering of center votes
# ---------------------------------------------------------------------------


def _mean_shift_modes(votes: np.ndarray, params: MeanShiftParams) -> np.ndarray:
    """Converge every vote to its flat-kernel mean-shift mode."""
    tree = cKDTree(votes)
    modes = votes.copy()
    active = np.arange(len(votes))
    for _ in range(params.max_iter):
        if len(active) == 0:
            break
        neighbors = tree.query_ball_point(modes[active], params.bandwidth)
        new_modes = np.array(
            [votes[idx].mean(axis=0) if idx else modes[a] for idx, a in zip(neighbors, active)]
        )
        moved = np.linalg.norm(new_modes - modes[active], axis=1) > params.tol
        modes[active] = new_modes
        active = active[moved]
    return modes


def cluster_votes(
    organized,
    votes: np.ndarray,
    fg_mask: np.ndarray,
    bandwidth: float = 0.03,
    params: MeanShiftParams | None = None,
) -> np.ndarray:
    """Group foreground votes into instances by flat-kernel mean shift.

    Modes closer than bandwidth/2 merge; clusters below the minimum pixel
    count are relabeled background. Instance ids are canonical: descending
    pixel count, ties broken by the scanline index of the first pixel.
    """
    if params is None:
        params = MeanShiftParams(bandwidth=bandwidth)
    elif params.bandwidth != bandwidth:
        params = MeanShiftParams(bandwidth, params.max_iter, params.tol, params.min_cluster_px)
    if params.bandwidth <= 0:
        raise SegmentationError("bandwidth must be > 0")
    grid = organized.grid if isinstance(organized, OrganizedCloud) else np.asarray(organized)
    votes = np.asarray(votes, dtype=float)
    fg_mask = np.asarray(fg_mask, dtype=bool)
    H, W = fg_mask.shape
    labels = np.zeros((H, W), dtype=np.int32)
    flat_idx = np.nonzero(fg_mask.ravel())[0]
    if len(flat_idx) == 0:
        return labels
    pts = (grid.reshape(-1, 3) + votes.reshape(-1, 3))[flat_idx]
    modes = _mean_shift_modes(pts, params)

    # Merge modes within bandwidth/2, scanning pixels in scanline order:
    # the first unclaimed pixel's mode becomes the representative and claims
    # every unclaimed mode in its half-bandwidth ball, which makes the
    # labeling independent of any parallel iteration schedule.
    mode_tree = cKDTree(modes)
    assign = np.full(len(modes), -1, dtype=np.int64)
    first_pixel = []
    for i in range(len(modes)):
        if assign[i] >= 0:
            continue
        rep_id = len(first_pixel)
        first_pixel.append(i)
        members = mode_tree.query_ball_point(modes[i], params.bandwidth / 2)
        members = np.asarray(members, dtype=np.int64)
        members = members[assign[members] < 0]
        assign[members] = rep_id
        assign[i] = rep_id
    sizes = np.bincount(assign, minlength=len(first_pixel))
    order = sorted(range(len(first_pixel)), key=lambda j: (-sizes[j], first_pixel[j]))
    remap = np.zeros(len(first_pixel), dtype=np.int32)
    next_id = 1
    for j in order:
        if sizes[j] >= params.min_cluster_px:
            remap[j] = next_id
            next_id += 1
    out = np.zeros(H * W, dtype=np.int32)
    out[flat_idx] = remap[assign]
    return out.reshape(H, W)


# ---------------------------------------------------------------------------
# Vote oracle (stands in for the trained network)
# ---------------------------------------------------------------------------


@dataclass
class VoteOracle:
    organized: OrganizedCloud     # camera-frame points
    votes: np.ndarray             # (H, W, 3) offsets to instance centroids
    instance_map: np.ndarray      # (H, W) ground truth labels
    centers: dict                 # instance id -> camera-frame centroid


def oracle_votes(
    scene: SceneModel,
    camera: CameraModel,
    noise_std: float = 0.0,
    seed: int = 0,
) -> VoteOracle:
    """Render the scene and emit exact (optionally noised) center votes:
    vote_i = centroid(instance(i)) - point_i for every foreground pixel."""
    render = render_depth(scene, camera)
    organized = backproject(render.depth, camera.intrinsics)
    labels = render.instance_map
    centers_cam = {
        oid: camera.world_to_cam(np.asarray(c)[None, :])[0] for oid, c in render.centers.items()
    }
    votes = np.zeros(organized.grid.shape, dtype=float)
    for oid, c in centers_cam.items():
        mask = labels == oid
        votes[mask] = c - organized.grid[mask]
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        votes[labels > 0] += rng.normal(scale=noise_std, size=(int((labels > 0).sum()), 3))
    votes[labels == 0] = 0.0
    return VoteOracle(organized=organized, votes=votes, instance_map=labels, centers=centers_cam)
