"""Command-line entry point: synth, annotate, plan-push, segment, simulate,
compare, losses.

All randomness flows from --seed; every output file embeds the hash of the
resolved configuration, and writers are atomic so failed commands leave no
partial outputs. Exit codes: 0 success, 2 validation error, 3 runtime
failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import codec, io, segmentation
from .geometry import GeometryError
from .grasp import FrictionModel, annotate_scene_grasps
from .policy import (
    POLICIES,
    EpisodeConfig,
    EpisodeParams,
    PolicyError,
    compare_policies,
    run_episode,
)
from .push import (
    InfeasiblePush,
    PushNotNeeded,
    default_workspace,
    plan_push,
    to_segment,
)
from .scene import Rect, default_camera, generate_scene, sample_cloud
from .segmentation import MeanShiftParams, cluster_votes, oracle_votes
from .suction import SuctionCupModel, annotate_scene_suction

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


@dataclass
class RunConfig:
    """Resolved tool configuration; INI sections map onto field prefixes."""

    # [suction]
    cup_radius: float = 0.01
    ring_samples: int = 16
    compliance_b: float = 200.0
    suction_threshold: float = 0.5
    approach_length: float = 0.02
    # [grasp]
    mu: float = 0.5
    cone_facets: int = 8
    # [segmentation]
    bandwidth: float = 0.03
    min_cluster_px: int = 50
    # [push]
    push_protect: float = 0.02
    push_dist: float = 0.16
    # [scene]
    table_xmin: float = -0.6
    table_xmax: float = 0.6
    table_ymin: float = -0.3
    table_ymax: float = 0.3
    clearance: float = 0.004
    # [camera]
    camera_height: float = 1.3
    camera_width: int = 320
    camera_height_px: int = 240
    # [annotate]
    annotate_suction_samples: int = 2048
    annotate_grasp_samples: int = 2048
    cloud_points: int = 16384
    # [policy]
    episode_suction_samples: int = 448
    episode_grasp_samples: int = 448

    SECTIONS = {
        "suction": ("cup_radius", "ring_samples", "compliance_b", "suction_threshold", "approach_length"),
        "grasp": ("mu", "cone_facets"),
        "segmentation": ("bandwidth", "min_cluster_px"),
        "push": ("push_protect", "push_dist"),
        "scene": ("table_xmin", "table_xmax", "table_ymin", "table_ymax", "clearance"),
        "camera": ("camera_height", "camera_width", "camera_height_px"),
        "annotate": ("annotate_suction_samples", "annotate_grasp_samples", "cloud_points"),
        "policy": ("episode_suction_samples", "episode_grasp_samples"),
    }

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        cfg = cls()
        if path is None:
            return cfg
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise FileNotFoundError(f"config file not found: {path}")
        types = {f.name: f.type for f in fields(cls)}
        for section, keys in cls.SECTIONS.items():
            if not parser.has_section(section):
                continue
            for key, value in parser.items(section):
                if key not in keys:
                    raise ValueError(f"unknown key [{section}] {key}")
                caster = int if types[key] == "int" else float
                setattr(cfg, key, caster(value))
        cfg.validate()
        return cfg

    def validate(self):
        self.cup()
        self.friction()
        self.bounds()
        if self.suction_threshold < 0 or self.suction_threshold > 1:
            raise ValueError("suction_threshold must lie in [0, 1]")
        if self.bandwidth <= 0 or self.push_dist <= 0 or self.push_protect < 0:
            raise ValueError("bandwidth and push distances must be positive")

    def cup(self) -> SuctionCupModel:
        return SuctionCupModel(
            radius=self.cup_radius,
            ring_samples=self.ring_samples,
            compliance_b=self.compliance_b,
            approach_length=self.approach_length,
        )

    def friction(self) -> FrictionModel:
        return FrictionModel(mu=self.mu, cone_facets=self.cone_facets)

    def bounds(self) -> Rect:
        return Rect(self.table_xmin, self.table_xmax, self.table_ymin, self.table_ymax)

    def episode_params(self) -> EpisodeParams:
        return EpisodeParams(
            cup=self.cup(),
            fm=self.friction(),
            threshold=self.suction_threshold,
            suction_samples=self.episode_suction_samples,
            grasp_samples=self.episode_grasp_samples,
            protect=self.push_protect,
            push_dist=self.push_dist,
        )

    def hash(self) -> str:
        lines = sorted(f"{f.name}={getattr(self, f.name)!r}" for f in fields(self))
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()


def _cmd_synth(args, cfg: RunConfig) -> int:
    scene = generate_scene(
        seed=args.seed, n_objects=args.objects, bounds=cfg.bounds(), clearance=cfg.clearance
    )
    io.save_scene(args.out, scene)
    print(f"scene seed={args.seed} objects={len(scene.objects)} -> {args.out}")
    return EXIT_OK


def _cmd_annotate(args, cfg: RunConfig) -> int:
    scene = io.load_scene(args.scene)
    seed = args.seed if args.seed is not None else scene.seed
    cloud = sample_cloud(scene, count=cfg.cloud_points, seed=seed)
    if args.cloud_out:
        io.save_ply(args.cloud_out, cloud)
    grasps = annotate_scene_grasps(scene, args.grasp_samples or cfg.annotate_grasp_samples,
                                   cfg.friction(), seed=seed)
    suctions = annotate_scene_suction(scene, cfg.cup(), cfg.suction_threshold,
                                      args.suction_samples or cfg.annotate_suction_samples, seed=seed)
    io.save_annotations(args.out, grasps, suctions, codec.default_bin_specs(), cfg.hash())
    print(f"annotated {len(grasps)} grasps, {len(suctions)} suctions ({len(cloud)} cloud points) -> {args.out}")
    return EXIT_OK


def _cmd_plan_push(args, cfg: RunConfig) -> int:
    scene = io.load_scene(args.scene)
    ws = default_workspace(scene.table_bounds)
    obj = scene.get(args.object)
    try:
        plan = plan_push(obj.footprint_points(), ws, protect=cfg.push_protect, dist=cfg.push_dist)
    except PushNotNeeded:
        print(f"object {args.object} already at the scene center; no push needed")
        return EXIT_OK
    except InfeasiblePush as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    seg = to_segment(plan)
    record = {
        "version": io.FORMAT_VERSION,
        "config_hash": cfg.hash(),
        "object_id": args.object,
        "x": plan.x, "y": plan.y, "theta": plan.theta, "d": plan.dist,
        "x1": seg.x1, "y1": seg.y1, "x2": seg.x2, "y2": seg.y2,
    }
    if args.out:
        io.write_json(args.out, record)
    print(
        "push object %d: start (%.4f, %.4f) theta %.4f dist %.4f"
        % (args.object, plan.x, plan.y, plan.theta, plan.dist)
    )
    return EXIT_OK


def _cmd_segment(args, cfg: RunConfig) -> int:
    scene = io.load_scene(args.scene)
    camera = default_camera(scene.table_bounds, height=cfg.camera_height,
                            resolution=(cfg.camera_width, cfg.camera_height_px))
    oracle = oracle_votes(scene, camera, noise_std=args.noise, seed=args.seed or 0)
    labels = cluster_votes(
        oracle.organized, oracle.votes, oracle.instance_map > 0, cfg.bandwidth,
        MeanShiftParams(bandwidth=cfg.bandwidth, min_cluster_px=cfg.min_cluster_px),
    )
    centroids = {}
    for i in np.unique(labels[labels > 0]):
        centroids[int(i)] = [float(v) for v in oracle.organized.grid[labels == i].mean(axis=0)]
    io.save_instance_map(args.out, labels, centroids)
    print(f"segmented {labels.max()} instances -> {args.out}")
    return EXIT_OK


def _cmd_simulate(args, cfg: RunConfig) -> int:
    for p in args.policy.split(","):
        if p not in POLICIES:
            raise PolicyError(f"unknown policy {p!r}; choose from {sorted(POLICIES)}")
    if args.seeds or "," in args.policy:
        # seed-range / multi-policy form: emit the comparison table
        if args.objects is None:
            raise PolicyError("seed-range simulation needs --objects")
        policies = tuple(args.policy.split(","))
        if len(policies) == 1:
            policies = (policies[0], "pgs") if policies[0] != "pgs" else ("gs", "pgs")
        report = compare_policies(
            range(args.seed, args.seed + (args.seeds or 1)), args.objects,
            policies, cfg.episode_params(), jobs=args.jobs,
        )
        table = io.comparison_table(report)
        if args.out:
            io._atomic_write(args.out, (f"# config_hash {cfg.hash()}\n" + table).encode())
        print(table, end="")
        return EXIT_OK
    if args.scene:
        scene = io.load_scene(args.scene)
        seed = scene.seed
    else:
        if args.objects is None:
            raise PolicyError("simulate needs --scene or --objects with --seed")
        scene = generate_scene(seed=args.seed, n_objects=args.objects,
                               bounds=cfg.bounds(), clearance=cfg.clearance)
        seed = args.seed
    n = len(scene.objects)
    episode_cfg = EpisodeConfig.for_objects(n, args.policy)
    stats = run_episode(scene, episode_cfg, cfg.episode_params())
    if args.out:
        io.save_episode_log(args.out, stats, args.policy, seed, cfg.hash())
    print(
        "policy=%s seed=%d objects=%d attempts=%d removed=%d sr=%.4f cr=%.4f"
        % (args.policy, seed, n, stats.attempts, stats.removed, stats.sr, stats.cr)
    )
    return EXIT_OK


def _cmd_compare(args, cfg: RunConfig) -> int:
    policies = tuple(p.strip() for p in args.policies.split(","))
    seeds = range(args.seed, args.seed + args.seeds)
    report = compare_policies(seeds, args.objects, policies, cfg.episode_params(), jobs=args.jobs)
    table = io.comparison_table(report)
    if args.out:
        io._atomic_write(args.out, (f"# config_hash {cfg.hash()}\n" + table).encode())
    print(table, end="")
    return EXIT_OK


def _require(doc: dict, key: str):
    if key not in doc:
        raise KeyError(key)
    return doc[key]


def _point_pairs(doc: dict):
    preds, targets = [], []
    for rec in doc:
        params_p = {}
        params_t = {}
        for name, p in _require(rec, "params").items():
            params_p[name] = codec.PredictedParam(np.asarray(p["logits"]), np.asarray(p["residuals"]))
            params_t[name] = codec.EncodedParam(int(p["bin"]), float(p["residual"]))
        preds.append(
            codec.PointPrediction(params=params_p, objectness=float(_require(rec, "objectness")),
                                  score=float(rec.get("score_pred", 0.0)))
        )
        label = int(_require(rec, "label"))
        targets.append(
            codec.PointTarget(label=label, params=params_t if label else None,
                              score=float(rec.get("score_target", 0.0)))
        )
    return preds, targets


def _cmd_losses(args, cfg: RunConfig) -> int:
    doc = io.read_json(args.fixture)
    report: dict = {"version": io.FORMAT_VERSION, "config_hash": cfg.hash()}
    try:
        if "grasp" in doc:
            out = codec.grasp_loss(*_point_pairs(_require(doc["grasp"], "points")))
            report["grasp_loss"] = {
                "total": out.total, "param_term": out.param_term,
                "focal_term": out.focal_term, "score_term": out.score_term,
            }
        if "suction" in doc:
            out = codec.suction_loss(*_point_pairs(_require(doc["suction"], "points")))
            report["suction_loss"] = {
                "total": out.total, "param_term": out.param_term,
                "focal_term": out.focal_term, "score_term": out.score_term,
            }
        if "grasp_loss" in report and "suction_loss" in report:
            report["prehensile_loss"] = codec.prehensile_loss(
                report["grasp_loss"]["total"], report["suction_loss"]["total"]
            )
        if "focal" in doc:
            report["focal"] = [
                codec.focal_loss(float(_require(c, "p")), int(_require(c, "label")),
                                 float(c.get("alpha", 0.25)), float(c.get("gamma", 2.0)))
                for c in doc["focal"]
            ]
        if "segmentation" in doc:
            seg = doc["segmentation"]
            l_fg = segmentation.foreground_loss(
                np.asarray(_require(seg, "pred_probs")), np.asarray(_require(seg, "gt"))
            )
            report["foreground_loss"] = l_fg
            if "votes" in seg:
                centers = {int(k): np.asarray(v) for k, v in _require(seg, "centers").items()}
                l_co = segmentation.center_offset_loss(
                    np.asarray(_require(seg, "grid")), np.asarray(seg["votes"]),
                    np.asarray(_require(seg, "instance_map")), centers,
                )
                report["center_offset_loss"] = l_co
                report["nonpre_loss"] = segmentation.nonpre_loss(l_fg, l_co)
    except KeyError as exc:
        print(f"error: fixture missing field {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if args.out:
        io.write_json(args.out, report)
    for key in sorted(k for k in report if k not in ("version", "config_hash")):
        print(f"{key}: {report[key]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tripick", description=__doc__)
    ap.add_argument("--config", help="INI config file with per-module sections")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a cluttered scene file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--objects", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("annotate", help="dense grasp + suction annotation of a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--cloud-out", default=None, help="also export the sampled cloud as PLY")
    p.add_argument("--suction-samples", type=int, default=None)
    p.add_argument("--grasp-samples", type=int, default=None)
    p.set_defaults(func=_cmd_annotate)

    p = sub.add_parser("plan-push", help="plan a center-directed push for one object")
    p.add_argument("--scene", required=True)
    p.add_argument("--object", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_plan_push)

    p = sub.add_parser("segment", help="cluster oracle center votes into an instance map")
    p.add_argument("--scene", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0, help="vote noise std in meters")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("simulate", help="run clearing episodes (one scene or a seed range)")
    p.add_argument("--scene", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=None, help="run a seed range and emit a comparison table")
    p.add_argument("--objects", type=int, default=None)
    p.add_argument("--policy", default="pgs", help="grasp | suction | gs | pgs (comma-separated for a table)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("compare", help="compare policies over seeded scenes")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--seeds", type=int, required=True, help="number of seeds")
    p.add_argument("--objects", type=int, required=True)
    p.add_argument("--policies", default="grasp,suction,gs,pgs")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("losses", help="evaluate reference losses on a fixture file")
    p.add_argument("fixture")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_losses)
    return ap


VALIDATION_ERRORS = (
    GeometryError,
    PolicyError,
    codec.CodecError,
    io.FormatError,
    segmentation.SegmentationError,
    FileNotFoundError,
    ValueError,
    configparser.Error,
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        return args.func(args, cfg)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # pragma: no cover - defensive
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
