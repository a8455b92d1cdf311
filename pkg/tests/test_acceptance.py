"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest -s tests/test_acceptance.py` to see the per-criterion
lines; every tolerance is pinned here, nothing is deferred.
"""

import math
import time

import numpy as np
import pytest

from tripick import io
from tripick.cli import main as cli_main
from tripick.codec import decode_values, default_bin_specs, encode_param, encode_values, focal_loss
from tripick.grasp import ContactPair, FrictionModel, contact_wrenches, ferrari_canny, resistible_basis
from tripick.meshes import sphere_mesh
from tripick.policy import compare_policies
from tripick.push import default_workspace, plan_push, region_contains, to_segment
from tripick.scene import (
    DEFAULT_TABLE,
    ObjectInstance,
    PrimitiveShape,
    SceneModel,
    default_camera,
    generate_scene,
)
from tripick.segmentation import MeanShiftParams, cluster_votes, foreground_loss, huber, oracle_votes
from tripick.suction import SuctionCupModel, evaluate_seal, project_ring, seal_sigma
from tripick.push import simulate_push


def ok(n, msg):
    print(f"\nACCEPTANCE {n}: PASS - {msg}")


def test_criterion_1_pose_codec_roundtrip():
    specs = default_bin_specs()
    rng = np.random.default_rng(0)
    t0 = time.time()
    for spec in specs.values():
        values = rng.uniform(spec.start, spec.upper, 100_000)
        bins, residuals = encode_values(values, spec)
        back = decode_values(bins, residuals, spec)
        assert np.max(np.abs(back - values)) <= 1e-9
        # exhaustive bin-boundary grid: every bin edge and the range ends
        edges = spec.start + spec.bin_size * np.arange(spec.bin_count + 1)
        for v in edges:
            enc = encode_param(float(v), spec)
            dec = spec.start + (enc.bin_index + enc.residual) * spec.bin_size
            assert abs(dec - v) <= 1e-9
    elapsed = time.time() - t0
    assert elapsed < 5.0
    ok(1, f"encode/decode roundtrip <=1e-9 over 7x100k values + boundary grids in {elapsed:.2f}s")


def test_criterion_2_suction_analytic_cases():
    # perpendicular flat plane through the full pipeline
    box = ObjectInstance(PrimitiveShape("box", (0.3, 0.3, 0.02)), 0.0, 0.0, 0.0, 1)
    scene = SceneModel((box,), DEFAULT_TABLE, (0.0, 0.0), 0)
    cup = SuctionCupModel()
    seal = evaluate_seal(scene, [0.0, 0.0, 0.02], [0.0, 0.0, -1.0], cup)
    assert not seal.failed
    assert abs(seal.score - 1.0) <= 1e-9
    # tilted approach at 15/30/60 degrees, independent of b
    for alpha_deg in (15, 30, 60):
        a = math.radians(alpha_deg)
        direction = np.array([math.sin(a), 0.0, -math.cos(a)])
        scores = []
        for b in (50.0, 200.0, 1000.0):
            s = evaluate_seal(
                scene, [0.0, 0.0, 0.02], direction,
                SuctionCupModel(radius=0.01, ring_samples=16, compliance_b=b),
            )
            assert not s.failed
            assert abs(s.score - math.cos(a)) <= 1e-6
            scores.append(s.score)
        assert max(scores) - min(scores) <= 1e-9  # b-independent
    # sphere case vs brute-force distance enumeration (scene-resolution mesh)
    mesh = sphere_mesh(0.05, segments=24)
    ring = project_ring(mesh, [0.0, 0.0, 0.1], [0.0, 0.0, -1.0], cup)
    centroid = ring.mean(axis=0)
    _, _, vt = np.linalg.svd(ring - centroid)
    normal = vt[2]
    dists = [float(np.dot(p - centroid, normal)) for p in ring]
    dbar = sum(dists) / len(dists)
    sigma_oracle = math.sqrt(sum((d - dbar) ** 2 for d in dists) / len(dists))
    sigma = seal_sigma(ring, centroid, normal)
    assert sigma == pytest.approx(sigma_oracle, rel=0.01, abs=1e-12)
    ok(2, "flat seal = 1 +/- 1e-9; tilted = cos(alpha) +/- 1e-6 for all b; sphere sigma within 1%")


def test_criterion_3_loss_oracles():
    # focal(gamma=0, alpha=1) == cross-entropy on a 1000-point grid
    for p in np.linspace(1e-6, 1 - 1e-6, 1000):
        for label in (0, 1):
            p_t = p if label == 1 else 1 - p
            assert abs(focal_loss(p, label, alpha=1.0, gamma=0.0) + math.log(p_t)) <= 1e-12
    # uniform foreground prediction = ln 2 exactly
    gt = np.zeros((20, 20), dtype=int)
    gt[:4] = 1
    assert abs(foreground_loss(np.full((20, 20), 0.5), gt) - math.log(2)) <= 1e-9
    # Huber continuity at the branch point
    d = 0.01
    assert abs(huber(d + 1e-6, d) - huber(d - 1e-6, d)) <= 1e-6 * 2.001
    assert abs(huber(d, d) - 0.5 * d) <= 1e-15
    # total losses match term-by-term independent evaluation
    golden = io.read_json("tests/fixtures/losses_golden.json")
    fixture_path = "tests/fixtures/losses_fixture.json"
    from tripick.cli import _point_pairs
    from tripick.codec import grasp_loss, prehensile_loss, suction_loss

    doc = io.read_json(fixture_path)
    g = grasp_loss(*_point_pairs(doc["grasp"]["points"]))
    s = suction_loss(*_point_pairs(doc["suction"]["points"]))
    assert g.total == pytest.approx(golden["grasp_loss"]["total"], abs=1e-9)
    assert s.total == pytest.approx(golden["suction_loss"]["total"], abs=1e-9)
    assert prehensile_loss(g.total, s.total) == pytest.approx(golden["prehensile_loss"], abs=1e-9)
    ok(3, "focal==CE to 1e-12; uniform fg = ln2; Huber continuous; totals match oracles to 1e-9")


def _random_pair(rng, antipodal):
    c = rng.uniform(-0.01, 0.01, 3)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    sep = rng.uniform(0.015, 0.045)
    off = rng.normal(size=3) * 0.01
    p1, p2 = off + axis * sep / 2, off - axis * sep / 2
    if antipodal:
        n1 = -axis + rng.normal(size=3) * 0.1
        n2 = axis + rng.normal(size=3) * 0.1
    else:
        n = rng.normal(size=3)
        n1 = n2 = n / np.linalg.norm(n)
    return ContactPair(p1, p2, n1, n2, 1, centroid=c, char_radius=0.04)


def test_criterion_4_ferrari_canny():
    fm = FrictionModel()
    antipodal = ContactPair(
        [0.015, 0.004, 0.022], [-0.015, 0.004, 0.022], [-1, 0, 0], [1, 0, 0], 1,
        centroid=[0, 0, 0.015], char_radius=0.025,
    )
    assert ferrari_canny(antipodal, fm) > 0
    same_side = ContactPair(
        [0.01, 0, 0.03], [-0.01, 0, 0.03], [0, 0, -1], [0, 0, -1], 1,
        centroid=[0, 0, 0.015], char_radius=0.025,
    )
    assert ferrari_canny(same_side, fm) == 0.0
    # random-direction support-function oracle; quality is unit-normalized so
    # "within 10%" is 0.1 on that scale
    rng = np.random.default_rng(7)
    for k in range(100):
        pair = _random_pair(rng, antipodal=(k % 2 == 0))
        q = ferrari_canny(pair, fm)
        w = contact_wrenches(pair, fm) @ resistible_basis(pair)
        dirs = np.random.default_rng(k).normal(size=(20_000, 5))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        oracle = max(0.0, float((w @ dirs.T).max(axis=0).min()))
        assert abs(q - oracle) <= 0.1
    # monotone in mu
    mus = [0.2, 0.35, 0.5, 0.7, 1.0]
    for _ in range(100):
        pair = _random_pair(rng, antipodal=True)
        qs = [ferrari_canny(pair, FrictionModel(mu=m)) for m in mus]
        assert all(b >= a - 1e-12 for a, b in zip(qs, qs[1:]))
    ok(4, "antipodal closes, same-side zero, oracle gap <= 0.1 on 100 pairs, monotone in mu")


def _partitions_equal(a, b):
    """Exact pixel-partition match up to instance id permutation."""
    if not np.array_equal(a > 0, b > 0):
        return False
    mapping = {}
    for i in np.unique(a[a > 0]):
        ids = np.unique(b[a == i])
        if len(ids) != 1:
            return False
        mapping[int(i)] = int(ids[0])
    return len(set(mapping.values())) == len(mapping)


def test_criterion_5_vote_clustering():
    camera = default_camera(resolution=(320, 240))
    params = MeanShiftParams(bandwidth=0.03, min_cluster_px=20)
    for seed in range(50):
        scene = generate_scene(seed=1000 + seed, n_objects=6)
        oracle = oracle_votes(scene, camera)
        labels = cluster_votes(oracle.organized, oracle.votes, oracle.instance_map > 0, 0.03, params)
        assert _partitions_equal(labels, oracle.instance_map), f"seed {seed} mismatch"
    # noisy synthetic votes: noise = bandwidth/4, spacing >= 4 x bandwidth
    rng = np.random.default_rng(5)
    H, W, k, bandwidth = 60, 60, 3, 0.03
    grid = np.zeros((H, W, 3))
    grid[:, :, 0] = np.linspace(0, 0.5, W)[None, :]
    grid[:, :, 1] = np.linspace(0, 0.5, H)[:, None]
    centers = [np.array([0.13 * (i + 1), 0.13 * (i + 1), 0.1]) for i in range(k)]  # 0.13 > 4*0.03
    gt = np.zeros((H, W), dtype=np.int32)
    votes = np.zeros((H, W, 3))
    for i, rows in enumerate(np.array_split(np.arange(H), k)):
        gt[rows] = i + 1
        votes[rows] = centers[i] - grid[rows]
    votes[gt > 0] += rng.normal(scale=bandwidth / 4, size=(int((gt > 0).sum()), 3))
    out = cluster_votes(grid, votes, gt > 0, bandwidth)
    tp = sum(
        np.bincount(out[gt == i][out[gt == i] > 0]).max(initial=0) for i in np.unique(gt[gt > 0])
    )
    precision = tp / max((out > 0).sum(), 1)
    recall = tp / (gt > 0).sum()
    f = 2 * precision * recall / (precision + recall)
    assert f >= 0.99
    ok(5, f"exact zero-noise recovery on 50 scenes; noisy synthetic F={f:.4f} >= 0.99")


def test_criterion_6_push_geometry():
    ws = default_workspace(DEFAULT_TABLE)
    rng = np.random.default_rng(3)
    checked = 0
    hull_checked = 0
    while checked < 200:
        x = rng.uniform(-0.5, 0.5)
        y = rng.uniform(-0.24, 0.24)
        if np.hypot(x, y) < 0.03:
            continue
        size = rng.uniform(0.02, 0.05)
        obj = ObjectInstance(PrimitiveShape("box", (size, size, 0.03)), x, y, rng.uniform(0, 6.28), 1)
        scene = SceneModel((obj,), DEFAULT_TABLE, (0.0, 0.0), 0)
        pts = obj.footprint_points()
        try:
            cfg = plan_push(pts, ws, protect=0.02, dist=0.1)
        except Exception:
            continue
        # start point strictly outside the footprint hull
        start = np.array([cfg.x, cfg.y])
        outside = False
        for i in range(len(pts)):
            e = pts[(i + 1) % len(pts)] - pts[i]
            v = start - pts[i]
            if e[0] * v[1] - e[1] * v[0] < -1e-12:
                outside = True
        assert outside
        hull_checked += 1
        # simulated planned push strictly decreases the center distance
        out = simulate_push(scene, to_segment(cfg), 1)
        d0 = float(np.hypot(*obj.centroid()[:2]))
        d1 = float(np.hypot(*out.get(1).centroid()[:2]))
        assert d1 < d0 - 1e-9
        checked += 1
    assert checked == 200 and hull_checked == 200
    ok(6, "200 random placements: strict center-distance decrease, start outside hull")


def test_criterion_7_policy_ordering():
    t0 = time.time()
    ws = default_workspace(DEFAULT_TABLE)

    def out_of_reach_count(scene):
        pos = np.array([[o.x, o.y] for o in scene.objects])
        in_g = region_contains(ws.grasp_region, pos)
        in_s = region_contains(ws.suction_region, pos)
        return int((~in_g & ~in_s).sum())

    results = {}
    for n_objects in (14, 17, 20):
        seeds = []
        candidate = n_objects * 10_000
        while len(seeds) < 30:
            if out_of_reach_count(generate_scene(seed=candidate, n_objects=n_objects)) >= 2:
                seeds.append(candidate)
            candidate += 1
        report = {r["policy"]: r for r in compare_policies(seeds, n_objects, jobs=2)}
        results[n_objects] = report
        pgs, gs = report["pgs"]["mean_cr"], report["gs"]["mean_cr"]
        single = max(report["grasp"]["mean_cr"], report["suction"]["mean_cr"])
        assert pgs > gs > single, f"{n_objects}: {pgs:.3f} / {gs:.3f} / {single:.3f}"
        assert pgs - gs >= 0.05
        for row in report.values():
            assert row["max_attempts"] <= {14: 19, 17: 22, 20: 25}[n_objects]
            assert row["max_pushes_per_object"] <= 2
    elapsed = time.time() - t0
    assert elapsed < 300.0
    summary = "; ".join(
        "%d obj: pgs %.3f > gs %.3f > single %.3f"
        % (
            n,
            results[n]["pgs"]["mean_cr"],
            results[n]["gs"]["mean_cr"],
            max(results[n]["grasp"]["mean_cr"], results[n]["suction"]["mean_cr"]),
        )
        for n in (14, 17, 20)
    )
    ok(7, f"{summary}; budgets respected; {elapsed:.0f}s < 300s")


def test_criterion_8_pipeline_determinism(tmp_path):
    outputs = {}
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        assert cli_main(["synth", "--seed", "5", "--objects", "14", "--out", str(d / "scene.json")]) == 0
        assert cli_main([
            "annotate", "--scene", str(d / "scene.json"), "--out", str(d / "ann.json"),
            "--suction-samples", "400", "--grasp-samples", "400",
            "--cloud-out", str(d / "cloud.ply"),
        ]) == 0
        assert cli_main([
            "simulate", "--scene", str(d / "scene.json"), "--policy", "pgs",
            "--out", str(d / "episode.json"),
        ]) == 0
        assert cli_main([
            "compare", "--seeds", "2", "--objects", "14", "--policies", "gs,pgs",
            "--jobs", "2", "--out", str(d / "table.tsv"),
        ]) == 0
        outputs[run] = {
            name: (d / name).read_bytes()
            for name in ("scene.json", "ann.json", "cloud.ply", "episode.json", "table.tsv")
        }
    for name in outputs["a"]:
        assert outputs["a"][name] == outputs["b"][name], f"{name} differs between runs"
    ok(8, "synth -> annotate -> simulate -> compare byte-identical across runs (jobs=2)")


def test_criterion_9_annotation_throughput(tmp_path):
    scene_path = tmp_path / "scene14.json"
    assert cli_main(["synth", "--seed", "42", "--objects", "14", "--out", str(scene_path)]) == 0
    t0 = time.time()
    assert cli_main([
        "annotate", "--scene", str(scene_path), "--out", str(tmp_path / "ann.json"),
    ]) == 0
    elapsed = time.time() - t0
    assert elapsed < 10.0
    grasps, suctions, _, _ = io.load_annotations(tmp_path / "ann.json")
    assert grasps and suctions
    ok(9, f"dense annotation (16384-pt cloud, 14 objects) in {elapsed:.2f}s < 10s")
