"""File formats: ASCII PLY clouds, 16-bit depth/label PNGs with JSON
sidecars, versioned scene and annotation documents, episode logs.

All writers are atomic (temp file + rename) and deterministic: fixed key
order, fixed float formatting, no timestamps.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict

import numpy as np
from PIL import Image

from .codec import BinSpec, GraspConfig, SuctionConfig
from .geometry import CameraIntrinsics, GeometryError, PointCloud, RotationAngles
from .scene import ObjectInstance, PrimitiveShape, Rect, SceneModel

FORMAT_VERSION = 1


class FormatError(ValueError):
    """Malformed or unsupported file content."""


def _atomic_write(path, data: bytes):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _dump_json(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode()


def write_json(path, obj):
    _atomic_write(path, _dump_json(obj))


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _fmt(x: float) -> str:
    return "%.17g" % float(x)


# ---------------------------------------------------------------------------
# Point clouds (ASCII PLY)
# ---------------------------------------------------------------------------


def save_ply(path, cloud: PointCloud):
    has_normals = cloud.normals is not None
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if has_normals:
        lines += ["property float nx", "property float ny", "property float nz"]
    lines.append("end_header")
    for i in range(len(cloud)):
        row = [_fmt(v) for v in cloud.points[i]]
        if has_normals:
            row += [_fmt(v) for v in cloud.normals[i]]
        lines.append(" ".join(row))
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


def load_ply(path) -> PointCloud:
    with open(path, "r", encoding="utf-8") as fh:
        if fh.readline().strip() != "ply":
            raise FormatError(f"{path}: not a PLY file")
        n_vertex = None
        props = []
        for line in fh:
            token = line.strip()
            if token.startswith("element vertex"):
                n_vertex = int(token.split()[-1])
            elif token.startswith("property"):
                props.append(token.split()[-1])
            elif token == "end_header":
                break
        if n_vertex is None:
            raise FormatError(f"{path}: missing vertex element")
        expected = ["x", "y", "z"] + (["nx", "ny", "nz"] if len(props) > 3 else [])
        if props != expected:
            raise FormatError(f"{path}: unsupported property layout {props}")
        rows = np.loadtxt(fh, dtype=float, max_rows=n_vertex, ndmin=2)
    if rows.shape != (n_vertex, len(props)):
        raise FormatError(f"{path}: vertex count mismatch")
    normals = rows[:, 3:6] if len(props) > 3 else None
    return PointCloud(points=rows[:, :3], normals=normals)


# ---------------------------------------------------------------------------
# Depth images (16-bit PNG + intrinsics sidecar)
# ---------------------------------------------------------------------------


def _sidecar(path) -> str:
    return f"{path}.json"


def save_depth_png(path, depth: np.ndarray, intr: CameraIntrinsics, depth_scale: float = 1e-4):
    depth = np.asarray(depth, dtype=float)
    if depth.shape != (intr.height, intr.width):
        raise GeometryError("depth shape does not match intrinsics")
    units = np.round(depth / depth_scale)
    if np.any(units > np.iinfo(np.uint16).max):
        raise FormatError("depth exceeds the 16-bit range at this depth scale")
    img = Image.fromarray(units.astype(np.uint16))
    tmp = f"{path}.tmp"
    img.save(tmp, format="PNG")
    os.replace(tmp, path)
    write_json(
        _sidecar(path),
        {
            "version": FORMAT_VERSION,
            "fx": intr.fx,
            "fy": intr.fy,
            "cx": intr.cx,
            "cy": intr.cy,
            "width": intr.width,
            "height": intr.height,
            "depth_scale": depth_scale,
        },
    )


def load_depth_png(path) -> tuple[np.ndarray, CameraIntrinsics, float]:
    meta = read_json(_sidecar(path))
    intr = CameraIntrinsics(
        fx=meta["fx"], fy=meta["fy"], cx=meta["cx"], cy=meta["cy"],
        width=meta["width"], height=meta["height"],
    )
    units = np.asarray(Image.open(path), dtype=np.uint16)
    if units.shape != (intr.height, intr.width):
        raise FormatError(f"{path}: image size does not match the sidecar")
    return units.astype(float) * meta["depth_scale"], intr, meta["depth_scale"]


def save_instance_map(path, labels: np.ndarray, centers: dict | None = None):
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > np.iinfo(np.uint16).max:
        raise FormatError("instance ids must fit in uint16")
    img = Image.fromarray(labels.astype(np.uint16))
    tmp = f"{path}.tmp"
    img.save(tmp, format="PNG")
    os.replace(tmp, path)
    ids, counts = np.unique(labels[labels > 0], return_counts=True)
    write_json(
        _sidecar(path),
        {
            "version": FORMAT_VERSION,
            "instances": [
                {
                    "id": int(i),
                    "pixel_count": int(c),
                    "centroid": [float(v) for v in centers[int(i)]] if centers else None,
                }
                for i, c in zip(ids, counts)
            ],
        },
    )


def load_instance_map(path) -> tuple[np.ndarray, list]:
    labels = np.asarray(Image.open(path), dtype=np.uint16).astype(np.int32)
    meta = read_json(_sidecar(path))
    return labels, meta["instances"]


# ---------------------------------------------------------------------------
# Scenes
# ---------------------------------------------------------------------------


def _yaw_quaternion(yaw: float) -> list:
    return [float(np.cos(yaw / 2)), 0.0, 0.0, float(np.sin(yaw / 2))]  # w x y z


def scene_to_dict(scene: SceneModel) -> dict:
    return {
        "version": FORMAT_VERSION,
        "seed": scene.seed,
        "bounds": {
            "xmin": scene.table_bounds.xmin,
            "xmax": scene.table_bounds.xmax,
            "ymin": scene.table_bounds.ymin,
            "ymax": scene.table_bounds.ymax,
        },
        "scene_center": [float(v) for v in scene.scene_center],
        "objects": [
            {
                "object_id": o.object_id,
                "kind": o.shape.kind,
                "dims": list(o.shape.dims),
                "pose": {
                    "quaternion": _yaw_quaternion(o.yaw),
                    "translation": [o.x, o.y, 0.0],
                },
            }
            for o in scene.objects
        ],
    }


def scene_from_dict(doc: dict) -> SceneModel:
    if doc.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported scene version {doc.get('version')!r}")
    try:
        bounds = Rect(**doc["bounds"])
        objects = []
        for rec in doc["objects"]:
            qw, qx, qy, qz = rec["pose"]["quaternion"]
            if abs(qx) > 1e-12 or abs(qy) > 1e-12:
                raise FormatError("only yaw rotations are supported")
            yaw = 2.0 * float(np.arctan2(qz, qw))
            tx, ty, tz = rec["pose"]["translation"]
            if abs(tz) > 1e-9:
                raise FormatError("objects must rest on the table (tz = 0)")
            objects.append(
                ObjectInstance(
                    PrimitiveShape(rec["kind"], tuple(rec["dims"])),
                    float(tx), float(ty), yaw, int(rec["object_id"]),
                )
            )
        return SceneModel(tuple(objects), bounds, np.asarray(doc["scene_center"]), int(doc["seed"]))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed scene document: {exc}") from exc


def save_scene(path, scene: SceneModel):
    write_json(path, scene_to_dict(scene))


def load_scene(path) -> SceneModel:
    return scene_from_dict(read_json(path))


def scene_hash(scene: SceneModel) -> str:
    return hashlib.sha256(_dump_json(scene_to_dict(scene))).hexdigest()


# ---------------------------------------------------------------------------
# Annotations
# ---------------------------------------------------------------------------


def _bin_specs_to_dict(specs: dict) -> dict:
    return {
        name: {"start": s.start, "bin_size": s.bin_size, "bin_count": s.bin_count}
        for name, s in specs.items()
    }


def _bin_specs_from_dict(doc: dict) -> dict:
    return {name: BinSpec(name, d["start"], d["bin_size"], d["bin_count"]) for name, d in doc.items()}


def annotations_to_dict(grasps, suctions, bin_specs, config_hash: str = "") -> dict:
    return {
        "version": FORMAT_VERSION,
        "config_hash": config_hash,
        "bin_specs": _bin_specs_to_dict(bin_specs),
        "grasps": [
            {
                "center": [float(v) for v in g.center],
                "theta": [g.angles.theta1, g.angles.theta2, g.angles.theta3],
                "width": g.width,
                "score": g.score,
                "object_id": g.object_id,
            }
            for g in grasps
        ],
        "suctions": [
            {
                "contact": [float(v) for v in s.contact],
                "theta": [s.angles.theta1, s.angles.theta2, s.angles.theta3],
                "score": s.score,
                "object_id": s.object_id,
            }
            for s in suctions
        ],
    }


def save_annotations(path, grasps, suctions, bin_specs, config_hash: str = ""):
    write_json(path, annotations_to_dict(grasps, suctions, bin_specs, config_hash))


def load_annotations(path):
    doc = read_json(path)
    if doc.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported annotation version {doc.get('version')!r}")
    try:
        grasps = [
            GraspConfig(
                center=np.asarray(g["center"]),
                angles=RotationAngles(*g["theta"]),
                width=g["width"],
                score=g["score"],
                object_id=g["object_id"],
            )
            for g in doc["grasps"]
        ]
        suctions = [
            SuctionConfig(
                contact=np.asarray(s["contact"]),
                angles=RotationAngles(*s["theta"]),
                score=s["score"],
                object_id=s["object_id"],
            )
            for s in doc["suctions"]
        ]
        return grasps, suctions, _bin_specs_from_dict(doc["bin_specs"]), doc.get("config_hash", "")
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed annotation document: missing {exc}") from exc


# ---------------------------------------------------------------------------
# Episode logs and comparison reports
# ---------------------------------------------------------------------------


def episode_log_to_dict(stats, policy: str, seed: int, config_hash: str = "") -> dict:
    return {
        "version": FORMAT_VERSION,
        "config_hash": config_hash,
        "policy": policy,
        "seed": seed,
        "n_objects": stats.n_objects,
        "attempts": stats.attempts,
        "successes": stats.successes,
        "removed": stats.removed,
        "sr": stats.sr,
        "cr": stats.cr,
        "failed_objects": sorted(stats.failed_objects),
        "actions": [asdict(rec) for rec in stats.action_log],
    }


def save_episode_log(path, stats, policy: str, seed: int, config_hash: str = ""):
    write_json(path, episode_log_to_dict(stats, policy, seed, config_hash))


def comparison_table(report) -> str:
    """Delimited table: one row per (policy, n_objects) with means and
    per-seed values."""
    lines = ["policy\tn_objects\tmean_sr\tmean_cr\tper_seed_sr\tper_seed_cr"]
    for row in report:
        lines.append(
            "\t".join(
                [
                    row["policy"],
                    str(row["n_objects"]),
                    "%.4f" % row["mean_sr"],
                    "%.4f" % row["mean_cr"],
                    ",".join("%.4f" % v for v in row["sr"]),
                    ",".join("%.4f" % v for v in row["cr"]),
                ]
            )
        )
    return "\n".join(lines) + "\n"
