"""Push planning geometry and the quasi-static push effect model."""

import warnings

import numpy as np
import pytest
from scipy.spatial import ConvexHull

from tripick.push import (
    InfeasiblePush,
    PushConfig,
    PushNotNeeded,
    PushSegment,
    default_workspace,
    plan_push,
    region_contains,
    simulate_push,
    to_segment,
)
from tripick.scene import DEFAULT_TABLE, ObjectInstance, PrimitiveShape, SceneModel


WS = default_workspace(DEFAULT_TABLE)


def square_points(cx, cy, half):
    return np.array(
        [[cx - half, cy - half], [cx + half, cy - half], [cx + half, cy + half], [cx - half, cy + half]]
    )


class TestPlanPush:
    def test_axis_aligned_case(self):
        # object around (0.4, 0), center (0, 0): push direction pi, start
        # just beyond the max-x point plus the protecting distance
        pts = square_points(0.4, 0.0, 0.03)
        cfg = plan_push(pts, WS, protect=0.02, dist=0.1)
        assert cfg.theta == pytest.approx(np.pi, abs=1e-12)
        assert cfg.x == pytest.approx(0.43 + 0.02, abs=1e-12)
        assert cfg.y == pytest.approx(0.0, abs=1e-12)
        assert cfg.dist == pytest.approx(0.1, abs=1e-12)

    def test_symmetric_object_on_y_axis(self):
        pts = square_points(0.0, 0.2, 0.025)
        cfg = plan_push(pts, WS, protect=0.02, dist=0.1)
        assert cfg.theta == pytest.approx(-np.pi / 2, abs=1e-12)
        assert cfg.x == pytest.approx(0.0, abs=1e-9)
        assert cfg.y == pytest.approx(0.225 + 0.02, abs=1e-12)

    def test_start_outside_hull_segment_enters(self):
        # random convex blobs: the start never sits inside the hull and the
        # push segment always enters it (point-in-hull oracle)
        rng = np.random.default_rng(0)
        for _ in range(100):
            center = rng.uniform(-0.3, 0.3, 2)
            raw = center + rng.normal(scale=0.02, size=(12, 2))
            hull = ConvexHull(raw)
            pts = raw[hull.vertices]
            try:
                cfg = plan_push(pts, WS, protect=0.02, dist=0.1)
            except (PushNotNeeded, InfeasiblePush):
                continue
            seg = to_segment(cfg)

            def inside(q):
                for i in range(len(pts)):
                    e = pts[(i + 1) % len(pts)] - pts[i]
                    v = q - pts[i]
                    if e[0] * v[1] - e[1] * v[0] < -1e-12:
                        return False
                return True

            assert not inside(np.array([cfg.x, cfg.y]))
            # the far contact point sits at parameter protect/dist; include it
            # exactly so tangent-thin intersections are not missed by sampling
            ts = np.append(np.linspace(0, 1, 200), 0.02 / cfg.dist)
            ts = ts[ts <= 1.0]
            samples = np.stack([seg.x1 + ts * (seg.x2 - seg.x1), seg.y1 + ts * (seg.y2 - seg.y1)], axis=1)
            assert any(inside(s) for s in samples)

    def test_push_not_needed_at_center(self):
        with pytest.raises(PushNotNeeded):
            plan_push(square_points(0.0, 0.0, 0.02), WS)

    def test_infeasible_off_table_start(self):
        # object hugging the +x edge: the start would fall off the table
        pts = square_points(0.585, 0.0, 0.012)
        with pytest.raises(InfeasiblePush):
            plan_push(pts, WS, protect=0.05, dist=0.1)

    def test_dist_capped_at_center_distance(self):
        pts = square_points(0.05, 0.0, 0.01)
        cfg = plan_push(pts, WS, protect=0.02, dist=0.1)
        assert cfg.dist == pytest.approx(0.05, abs=1e-12)

    def test_rotation_equivariance(self):
        # rotating the object about the scene center rotates theta and the
        # start point by the same angle
        pts = square_points(0.25, 0.05, 0.02)
        cfg0 = plan_push(pts, WS, protect=0.02, dist=0.08)
        phi = 0.5
        c, s = np.cos(phi), np.sin(phi)
        rot = np.array([[c, -s], [s, c]])
        cfg1 = plan_push(pts @ rot.T, WS, protect=0.02, dist=0.08)
        assert (cfg1.theta - cfg0.theta) % (2 * np.pi) == pytest.approx(phi, abs=1e-9)
        np.testing.assert_allclose(rot @ [cfg0.x, cfg0.y], [cfg1.x, cfg1.y], atol=1e-9)


class TestToSegment:
    def test_along_x(self):
        seg = to_segment(PushConfig(0.0, 0.0, 0.0, 0.1))
        assert (seg.x1, seg.y1) == (0.0, 0.0)
        assert seg.x2 == pytest.approx(0.1, abs=1e-15)
        assert seg.y2 == pytest.approx(0.0, abs=1e-15)

    def test_along_y(self):
        seg = to_segment(PushConfig(1.0, 1.0, np.pi / 2, 0.2))
        assert seg.x2 == pytest.approx(1.0, abs=1e-12)
        assert seg.y2 == pytest.approx(1.2, abs=1e-12)

    def test_length_equals_dist(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            cfg = PushConfig(*rng.uniform(-1, 1, 2), rng.uniform(-np.pi, np.pi), rng.uniform(0.01, 0.5))
            assert to_segment(cfg).length == pytest.approx(cfg.dist, abs=1e-12)


def lone_box_scene(x, y, size=0.04):
    obj = ObjectInstance(PrimitiveShape("box", (size, size, 0.03)), x, y, 0.0, 1)
    return SceneModel((obj,), DEFAULT_TABLE, (0.0, 0.0), 0)


class TestSimulatePush:
    def test_unobstructed_push_moves_by_dist(self):
        # closed form: an unobstructed planned push translates the object by
        # exactly the push distance toward the center
        scene = lone_box_scene(0.4, 0.0)
        obj = scene.get(1)
        cfg = plan_push(obj.footprint_points(), WS, protect=0.02, dist=0.1)
        new_scene = simulate_push(scene, to_segment(cfg), 1)
        d0 = np.linalg.norm(obj.centroid()[:2])
        d1 = np.linalg.norm(new_scene.get(1).centroid()[:2])
        assert d0 - d1 == pytest.approx(0.1, abs=1e-6)

    def test_blocked_push_stops_at_contact(self):
        pushed = ObjectInstance(PrimitiveShape("box", (0.04, 0.04, 0.03)), 0.4, 0.0, 0.0, 1)
        blocker = ObjectInstance(PrimitiveShape("box", (0.04, 0.04, 0.03)), 0.33, 0.0, 0.0, 2)
        scene = SceneModel((pushed, blocker), DEFAULT_TABLE, (0.0, 0.0), 0)
        cfg = plan_push(pushed.footprint_points(), WS, protect=0.02, dist=0.1)
        new_scene = simulate_push(scene, to_segment(cfg), 1)
        from tripick.scene import object_distance

        gap = object_distance(new_scene.get(1), new_scene.get(2))
        assert -1e-9 <= gap <= 2.5e-3  # in contact, never interpenetrating
        assert np.array_equal(
            [new_scene.get(2).x, new_scene.get(2).y], [blocker.x, blocker.y]
        )  # the blocker never moves

    def test_miss_is_noop_with_warning(self):
        scene = lone_box_scene(0.4, 0.0)
        seg = PushSegment(0.0, 0.25, -0.1, 0.25)
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            out = simulate_push(scene, seg, 1)
        assert any("misses" in str(x.message) for x in w)
        assert out.get(1).x == scene.get(1).x

    def test_planned_pushes_strictly_reduce_center_distance(self):
        rng = np.random.default_rng(5)
        count = 0
        for _ in range(60):
            x, y = rng.uniform(-0.45, 0.45), rng.uniform(-0.2, 0.2)
            if np.hypot(x, y) < 0.05:
                continue
            scene = lone_box_scene(x, y, size=0.03)
            obj = scene.get(1)
            try:
                cfg = plan_push(obj.footprint_points(), WS, protect=0.02, dist=0.1)
            except InfeasiblePush:
                continue
            out = simulate_push(scene, to_segment(cfg), 1)
            d0 = np.linalg.norm(obj.centroid()[:2])
            d1 = np.linalg.norm(out.get(1).centroid()[:2])
            assert d1 < d0 - 1e-9
            count += 1
        assert count > 30


class TestWorkspace:
    def test_regions_cover_center(self):
        assert region_contains(WS.grasp_region, np.array([[0.0, 0.0]]))[0]
        assert region_contains(WS.suction_region, np.array([[0.0, 0.0]]))[0]

    def test_far_corners_out_of_both(self):
        corner = np.array([[0.55, 0.27]])
        assert not region_contains(WS.grasp_region, corner)[0]
        assert not region_contains(WS.suction_region, corner)[0]

    def test_left_right_split(self):
        left = np.array([[-0.5, 0.0]])
        right = np.array([[0.5, 0.0]])
        assert region_contains(WS.suction_region, left)[0]
        assert not region_contains(WS.grasp_region, left)[0]
        assert region_contains(WS.grasp_region, right)[0]
        assert not region_contains(WS.suction_region, right)[0]
