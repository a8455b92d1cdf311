"""Bin-plus-residual encoding of picking configurations and reference losses.

A continuous parameter v covered by bins of size s starting at v0 encodes as
bin = floor((v - v0) / s) and residual = (v - v0 - bin * s) / s in [0, 1).
Values exactly at the covered upper bound map into the last bin with the
residual clamped just below 1 so boundary samples stay encodable.

The loss functions are reference calculators (and test oracles for network
code living elsewhere); no gradients, no batching tricks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import RotationAngles

GRIPPER_MAX_WIDTH = 0.05

GRASP_PARAM_ORDER = ("x", "y", "z", "w", "theta1", "theta2", "theta3")
SUCTION_PARAM_ORDER = ("theta1", "theta2", "theta3")

_RES_CLAMP = 1.0 - 1e-12
_PROB_EPS = 1e-7


class CodecError(ValueError):
    """Out-of-range values or malformed encodings."""


@dataclass(frozen=True)
class BinSpec:
    """Uniform bin layout for one parameter."""

    name: str
    start: float
    bin_size: float
    bin_count: int

    def __post_init__(self):
        if self.bin_size <= 0:
            raise CodecError(f"{self.name}: bin_size must be > 0")
        if self.bin_count < 1:
            raise CodecError(f"{self.name}: bin_count must be >= 1")

    @property
    def upper(self) -> float:
        return self.start + self.bin_count * self.bin_size


@dataclass(frozen=True)
class EncodedParam:
    bin_index: int
    residual: float


@dataclass
class GraspConfig:
    """Parallel-jaw grasp: center L, rotation triple, opening width, quality."""

    center: np.ndarray
    angles: RotationAngles
    width: float
    score: float
    object_id: int = 0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        if not (0.0 <= self.width <= GRIPPER_MAX_WIDTH + 1e-12):
            raise CodecError(f"grasp width {self.width} outside [0, {GRIPPER_MAX_WIDTH}]")
        if not (0.0 <= self.score <= 1.0):
            raise CodecError(f"grasp score {self.score} outside [0, 1]")


@dataclass
class SuctionConfig:
    """Suction action: contact point, approach rotation triple, seal score."""

    contact: np.ndarray
    angles: RotationAngles
    score: float
    object_id: int = 0

    def __post_init__(self):
        self.contact = np.asarray(self.contact, dtype=float).reshape(3)
        if not (0.0 <= self.score <= 1.0):
            raise CodecError(f"suction score {self.score} outside [0, 1]")


@dataclass
class PredictedParam:
    """Per-bin classification logits and per-bin residual predictions."""

    bin_logits: np.ndarray
    residuals: np.ndarray

    def __post_init__(self):
        self.bin_logits = np.asarray(self.bin_logits, dtype=float).ravel()
        self.residuals = np.asarray(self.residuals, dtype=float).ravel()
        if len(self.bin_logits) != len(self.residuals):
            raise CodecError("bin_logits and residuals must have equal length")


def default_bin_specs(center_halfspan: float = 0.05) -> dict[str, BinSpec]:
    """Default layout: 12 azimuth bins, 3 elevation bins, 12 axis bins,
    10 x 1 cm bins per center axis around the reference point, 5 x 1 cm
    width bins."""
    return {
        "x": BinSpec("x", -center_halfspan, 0.01, 10),
        "y": BinSpec("y", -center_halfspan, 0.01, 10),
        "z": BinSpec("z", -center_halfspan, 0.01, 10),
        "w": BinSpec("w", 0.0, 0.01, 5),
        "theta1": BinSpec("theta1", 0.0, np.pi / 6, 12),
        "theta2": BinSpec("theta2", 0.0, np.pi / 6, 3),
        "theta3": BinSpec("theta3", -np.pi, np.pi / 6, 12),
    }


_RANGE_TOL = 1e-9


def encode_param(value: float, spec: BinSpec) -> EncodedParam:
    if not (spec.start - _RANGE_TOL <= value <= spec.upper + _RANGE_TOL):
        raise CodecError(
            f"{spec.name}: value {value} outside covered range "
            f"[{spec.start}, {spec.upper}]"
        )
    rel = (max(value, spec.start) - spec.start) / spec.bin_size
    bin_index = int(math.floor(rel))
    if bin_index >= spec.bin_count:  # exactly at (or within eps of) the top
        return EncodedParam(spec.bin_count - 1, _RES_CLAMP)
    residual = rel - bin_index
    return EncodedParam(bin_index, min(residual, _RES_CLAMP))


def decode_param(enc: EncodedParam, spec: BinSpec) -> float:
    if not (0 <= enc.bin_index < spec.bin_count):
        raise CodecError(f"{spec.name}: bin index {enc.bin_index} outside [0, {spec.bin_count})")
    if not (0.0 <= enc.residual < 1.0):
        raise CodecError(f"{spec.name}: residual {enc.residual} outside [0, 1)")
    return spec.start + (enc.bin_index + enc.residual) * spec.bin_size


def encode_values(values: np.ndarray, spec: BinSpec) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized encode over an array of values."""
    values = np.asarray(values, dtype=float)
    oob = (values < spec.start - _RANGE_TOL) | (values > spec.upper + _RANGE_TOL)
    if np.any(oob):
        raise CodecError(f"{spec.name}: value {values[oob][0]} outside covered range")
    rel = (np.maximum(values, spec.start) - spec.start) / spec.bin_size
    bins = np.floor(rel).astype(np.int64)
    top = bins >= spec.bin_count
    bins[top] = spec.bin_count - 1
    residuals = np.where(top, _RES_CLAMP, np.minimum(rel - bins, _RES_CLAMP))
    return bins, residuals


def decode_values(bins: np.ndarray, residuals: np.ndarray, spec: BinSpec) -> np.ndarray:
    return spec.start + (np.asarray(bins) + np.asarray(residuals)) * spec.bin_size


def encode_grasp(
    g: GraspConfig, specs: dict[str, BinSpec], reference_point
) -> dict[str, EncodedParam]:
    """Encode all seven grasp parameters; center components are encoded
    relative to the proposing contact point."""
    reference_point = np.asarray(reference_point, dtype=float).reshape(3)
    rel = g.center - reference_point
    values = {
        "x": rel[0],
        "y": rel[1],
        "z": rel[2],
        "w": g.width,
        "theta1": g.angles.theta1,
        "theta2": g.angles.theta2,
        "theta3": g.angles.theta3,
    }
    return {name: encode_param(values[name], specs[name]) for name in GRASP_PARAM_ORDER}


def decode_grasp(
    encoded: dict[str, EncodedParam],
    specs: dict[str, BinSpec],
    reference_point,
    score: float = 0.0,
    object_id: int = 0,
) -> GraspConfig:
    reference_point = np.asarray(reference_point, dtype=float).reshape(3)
    v = {name: decode_param(encoded[name], specs[name]) for name in GRASP_PARAM_ORDER}
    return GraspConfig(
        center=reference_point + np.array([v["x"], v["y"], v["z"]]),
        angles=RotationAngles(v["theta1"], v["theta2"], v["theta3"]),
        width=v["w"],
        score=score,
        object_id=object_id,
    )


def encode_suction(s: SuctionConfig, specs: dict[str, BinSpec]) -> dict[str, EncodedParam]:
    """Suction is point-wise: only the rotation triple is encoded."""
    values = {"theta1": s.angles.theta1, "theta2": s.angles.theta2, "theta3": s.angles.theta3}
    return {name: encode_param(values[name], specs[name]) for name in SUCTION_PARAM_ORDER}


def decode_suction(
    encoded: dict[str, EncodedParam],
    specs: dict[str, BinSpec],
    contact,
    score: float = 0.0,
    object_id: int = 0,
) -> SuctionConfig:
    v = {name: decode_param(encoded[name], specs[name]) for name in SUCTION_PARAM_ORDER}
    return SuctionConfig(
        contact=contact,
        angles=RotationAngles(v["theta1"], v["theta2"], v["theta3"]),
        score=score,
        object_id=object_id,
    )


# ---------------------------------------------------------------------------
# Reference losses
# ---------------------------------------------------------------------------


def bin_loss(pred: PredictedParam, target: EncodedParam) -> float:
    """Cross-entropy over softmaxed bin logits against the one-hot target bin
    plus squared error of the predicted residual at the target bin."""
    logits = pred.bin_logits
    if not (0 <= target.bin_index < len(logits)):
        raise CodecError("target bin index outside predicted bin count")
    shifted = logits - logits.max()
    log_z = math.log(np.exp(shifted).sum())
    ce = log_z - shifted[target.bin_index]
    res_err = pred.residuals[target.bin_index] - target.residual
    return float(ce + res_err * res_err)


def focal_loss(pred_prob: float, label: int, alpha: float = 0.25, gamma: float = 2.0) -> float:
    """-alpha * (1 - p_t)^gamma * ln(p_t), with p_t the probability assigned
    to the true class. Probabilities are clamped to [1e-7, 1 - 1e-7]."""
    if label not in (0, 1):
        raise CodecError("focal loss label must be 0 or 1")
    p = min(max(pred_prob, _PROB_EPS), 1.0 - _PROB_EPS)
    p_t = p if label == 1 else 1.0 - p
    return float(-alpha * (1.0 - p_t) ** gamma * math.log(p_t))


@dataclass
class PointPrediction:
    """Network outputs for one scene point."""

    params: dict[str, PredictedParam]
    objectness: float  # probability the point proposes a positive action
    score: float = 0.0


@dataclass
class PointTarget:
    """Ground truth for one scene point; params present only for positives."""

    label: int
    params: dict[str, EncodedParam] | None = None
    score: float = 0.0


@dataclass
class LossBreakdown:
    total: float
    param_term: float
    focal_term: float
    score_term: float
    no_positives: bool = False


def _action_loss(
    preds,
    targets,
    param_order,
    alpha: float,
    gamma: float,
) -> LossBreakdown:
    if len(preds) != len(targets):
        raise CodecError("prediction/target lists must have equal length")
    positives = [(p, t) for p, t in zip(preds, targets) if t.label == 1]
    param_term = 0.0
    score_term = 0.0
    no_positives = not positives
    if positives:
        for p, t in positives:
            if t.params is None:
                raise CodecError("positive target is missing encoded parameters")
            for name in param_order:
                param_term += bin_loss(p.params[name], t.params[name])
        param_term /= len(positives)
        score_term = float(
            np.mean([(p.score - t.score) ** 2 for p, t in positives])
        )
    focal_term = float(
        np.mean([focal_loss(p.objectness, t.label, alpha, gamma) for p, t in zip(preds, targets)])
    )
    return LossBreakdown(
        total=param_term + focal_term + score_term,
        param_term=param_term,
        focal_term=focal_term,
        score_term=score_term,
        no_positives=no_positives,
    )


def grasp_loss(preds, targets, alpha: float = 0.25, gamma: float = 2.0) -> LossBreakdown:
    """Grasp branch total: positive-averaged bin/residual term over all seven
    parameters + focal point-classification term + MSE score term."""
    return _action_loss(preds, targets, GRASP_PARAM_ORDER, alpha, gamma)


def suction_loss(preds, targets, alpha: float = 0.25, gamma: float = 2.0) -> LossBreakdown:
    """Suction branch total; the parameter sum runs over the rotation triple
    only."""
    return _action_loss(preds, targets, SUCTION_PARAM_ORDER, alpha, gamma)


def prehensile_loss(grasp_loss_val: float, suction_loss_val: float) -> float:
    if not (math.isfinite(grasp_loss_val) and math.isfinite(suction_loss_val)):
        raise CodecError("loss values must be finite")
    if grasp_loss_val < 0 or suction_loss_val < 0:
        raise CodecError("loss values must be >= 0")
    return grasp_loss_val + suction_loss_val
