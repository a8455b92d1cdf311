"""Action selection and the clutter-clearing episode protocol.

Each step re-annotates the current scene, executes the best reachable
prehensile candidate, and falls back to pushing the best unreachable
object toward the scene center when nothing is reachable. Prehensile
attempts are budgeted; pushes are limited to two per object, after which
the object is recorded as a failure. Success Rate counts successful
prehensile attempts over prehensile attempts; Completion Rate counts
removed objects over objects presented.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .codec import GRIPPER_MAX_WIDTH, GraspConfig, SuctionConfig
from .geometry import angles_to_direction
from .grasp import FrictionModel, annotate_scene_grasps, ferrari_canny, find_contacts
from .io import scene_hash
from .push import (
    DEFAULT_PROTECT,
    DEFAULT_PUSH_DIST,
    PUSH_LIMIT_PER_OBJECT,
    InfeasiblePush,
    PushConfig,
    PushNotNeeded,
    WorkspaceModel,
    default_workspace,
    plan_push,
    region_contains,
    to_segment,
)
from .scene import SceneModel, generate_scene
from .suction import (
    DEFAULT_THRESHOLD,
    SuctionCupModel,
    annotate_scene_suction,
    batch_approach_collisions,
    evaluate_seal,
)

BUDGET_BY_OBJECTS = {14: 19, 17: 22, 20: 25}

POLICIES = {
    "grasp": frozenset({"grasp"}),
    "suction": frozenset({"suction"}),
    "gs": frozenset({"grasp", "suction"}),
    "pgs": frozenset({"grasp", "suction", "push"}),
}


class PolicyError(ValueError):
    pass


class NoCandidates(Exception):
    """No prehensile candidates exist anywhere: the episode is over."""


class NothingReachable(Exception):
    """Candidates exist but none are reachable and no push is available."""

    def __init__(self, exhausted_ids):
        super().__init__(f"unreachable objects with no push budget: {sorted(exhausted_ids)}")
        self.exhausted_ids = frozenset(exhausted_ids)


@dataclass
class Action:
    kind: str  # "grasp" | "suction" | "push"
    target_object: int
    score: float = 0.0
    grasp: GraspConfig | None = None
    suction: SuctionConfig | None = None
    push: PushConfig | None = None


@dataclass(frozen=True)
class EpisodeConfig:
    n_objects: int
    attempt_budget: int
    push_limit: int = PUSH_LIMIT_PER_OBJECT
    enabled_modes: frozenset = frozenset({"grasp", "suction", "push"})

    def __post_init__(self):
        if self.n_objects < 1:
            raise PolicyError("n_objects must be >= 1")
        if self.attempt_budget < 1:
            raise PolicyError("attempt_budget must be >= 1")
        if self.n_objects in BUDGET_BY_OBJECTS and self.attempt_budget != BUDGET_BY_OBJECTS[self.n_objects]:
            raise PolicyError(
                f"{self.n_objects} objects pair with a budget of "
                f"{BUDGET_BY_OBJECTS[self.n_objects]} prehensile attempts"
            )
        if self.push_limit < 0:
            raise PolicyError("push_limit must be >= 0")
        modes = frozenset(self.enabled_modes)
        if not modes <= {"grasp", "suction", "push"}:
            raise PolicyError(f"unknown modes {modes - {'grasp', 'suction', 'push'}}")
        if not modes & {"grasp", "suction"}:
            raise PolicyError("at least one prehensile mode must be enabled")
        object.__setattr__(self, "enabled_modes", modes)

    @classmethod
    def for_objects(cls, n_objects: int, policy: str = "pgs") -> "EpisodeConfig":
        budget = BUDGET_BY_OBJECTS.get(n_objects, n_objects + 5)
        return cls(n_objects=n_objects, attempt_budget=budget, enabled_modes=POLICIES[policy])


@dataclass
class ActionRecord:
    step: int
    kind: str
    target_object: int
    score: float
    success: bool
    scene_hash: str


@dataclass
class EpisodeStats:
    n_objects: int
    attempts: int = 0
    successes: int = 0
    removed: int = 0
    sr: float = 0.0
    cr: float = 0.0
    failed_objects: set = field(default_factory=set)
    action_log: list = field(default_factory=list)


def select_action(
    grasps,
    suctions,
    ws: WorkspaceModel,
    push_counts: dict,
    object_footprints: dict | None = None,
    push_limit: int = PUSH_LIMIT_PER_OBJECT,
    allow_push: bool = True,
    protect: float = DEFAULT_PROTECT,
    push_dist: float = DEFAULT_PUSH_DIST,
) -> Action:
    """Highest-scoring reachable prehensile candidate; ties prefer grasp
    over suction, then the lowest object id. With no reachable candidate,
    push the object owning the best unreachable candidate toward the scene
    center (while its push budget lasts).

    Raises NoCandidates when both candidate lists are empty and
    NothingReachable when candidates exist but neither a prehensile action
    nor a push can run.
    """
    pool = []  # (score, kind_rank, object_id, tiebreak xyz, action)
    if grasps:
        reach = region_contains(ws.grasp_region, np.array([g.center[:2] for g in grasps]))
        for g, ok in zip(grasps, reach):
            if ok:
                pool.append(
                    (-g.score, 0, g.object_id, tuple(g.center), Action("grasp", g.object_id, g.score, grasp=g))
                )
    if suctions:
        reach = region_contains(ws.suction_region, np.array([s.contact[:2] for s in suctions]))
        for s, ok in zip(suctions, reach):
            if ok:
                pool.append(
                    (-s.score, 1, s.object_id, tuple(s.contact), Action("suction", s.object_id, s.score, suction=s))
                )
    if pool:
        pool.sort(key=lambda row: row[:4])
        return pool[0][4]
    if not grasps and not suctions:
        raise NoCandidates()
    # push fallback: objects ranked by their best candidate score
    best_by_object: dict[int, float] = {}
    for c in list(grasps) + list(suctions):
        oid = c.object_id
        best_by_object[oid] = max(best_by_object.get(oid, 0.0), c.score)
    if not allow_push or object_footprints is None:
        raise NothingReachable(set(best_by_object))
    exhausted = set()
    for oid, score in sorted(best_by_object.items(), key=lambda kv: (-kv[1], kv[0])):
        if push_counts.get(oid, 0) >= push_limit:
            exhausted.add(oid)
            continue
        try:
            cfg = plan_push(object_footprints[oid], ws, protect=protect, dist=push_dist)
        except (PushNotNeeded, InfeasiblePush):
            exhausted.add(oid)
            continue
        return Action("push", oid, score, push=cfg)
    raise NothingReachable(exhausted)


def success_oracle(
    action: Action,
    scene: SceneModel,
    cup: SuctionCupModel = SuctionCupModel(),
    fm: FrictionModel = FrictionModel(),
    threshold: float = DEFAULT_THRESHOLD,
) -> bool:
    """Physical-outcome model: re-evaluate the executed action analytically.

    Grasps succeed on force closure at the executed contacts within the
    gripper width; suctions on a sealed, collision-free approach; pushes
    when the object moves by more than 1 cm.
    """
    if action.kind == "grasp":
        g = action.grasp
        if g is None or g.width > GRIPPER_MAX_WIDTH + 1e-12:
            return False
        pair = find_contacts(scene, g)
        return pair is not None and pair.object_id == action.target_object and ferrari_canny(pair, fm) > 0
    if action.kind == "suction":
        s = action.suction
        if s is None:
            return False
        try:
            obj = scene.get(action.target_object)
        except KeyError:
            return False
        direction = angles_to_direction(s.angles)
        seal = evaluate_seal(obj, s.contact, direction, cup)
        if seal.failed or seal.score <= threshold:
            return False
        collide = batch_approach_collisions(
            scene, s.contact[None, :], direction[None, :], cup, exclude_id=action.target_object
        )
        return not bool(collide[0])
    if action.kind == "push":
        from .push import simulate_push

        before = scene.get(action.target_object)
        after = simulate_push(scene, to_segment(action.push), action.target_object)
        moved = np.hypot(after.get(action.target_object).x - before.x,
                         after.get(action.target_object).y - before.y)
        return moved > 0.01
    raise PolicyError(f"unknown action kind {action.kind!r}")


@dataclass
class EpisodeParams:
    """Everything run_episode needs besides the scene and budget."""

    ws: WorkspaceModel | None = None
    cup: SuctionCupModel = SuctionCupModel()
    fm: FrictionModel = FrictionModel()
    threshold: float = DEFAULT_THRESHOLD
    suction_samples: int = 448
    grasp_samples: int = 448
    protect: float = DEFAULT_PROTECT
    push_dist: float = DEFAULT_PUSH_DIST


def run_episode(scene: SceneModel, cfg: EpisodeConfig, params: EpisodeParams | None = None) -> EpisodeStats:
    """Annotate / select / execute / update until the scene clears, the
    prehensile budget runs out, or nothing actionable remains. Pushes do
    not consume the prehensile budget; an object that would need a third
    push is marked failed and excluded from further candidates."""
    params = params or EpisodeParams()
    if not scene.objects:
        raise PolicyError("episode requires a nonempty scene (n_objects >= 1)")
    ws = params.ws or default_workspace(scene.table_bounds)
    n0 = len(scene.objects)
    stats = EpisodeStats(n_objects=n0)
    push_counts: dict[int, int] = {}
    failed: set[int] = set()
    cache: dict = {}
    # per-object sample counts frozen on the initial scene so the candidate
    # cache stays valid as objects are removed
    areas = np.array([o.mesh().face_areas().sum() for o in scene.objects])
    ids = [o.object_id for o in scene.objects]
    suction_counts = dict(
        zip(ids, np.maximum(1, np.round(params.suction_samples * areas / areas.sum()).astype(int)))
    )
    grasp_counts = dict(
        zip(ids, np.maximum(1, np.round(params.grasp_samples * areas / areas.sum()).astype(int)))
    )
    allow_push = "push" in cfg.enabled_modes
    step = 0
    while stats.attempts < cfg.attempt_budget:
        live = [o for o in scene.objects if o.object_id not in failed]
        if not live:
            break
        # annotate the full scene (failed objects still obstruct) and drop
        # candidates on failed objects afterwards
        grasps = (
            [
                g
                for g in annotate_scene_grasps(
                    scene, params.grasp_samples, params.fm, seed=scene.seed,
                    candidate_cache=cache, counts_by_object=grasp_counts,
                )
                if g.object_id not in failed
            ]
            if "grasp" in cfg.enabled_modes
            else []
        )
        suctions = (
            [
                s
                for s in annotate_scene_suction(
                    scene, params.cup, params.threshold, params.suction_samples,
                    seed=scene.seed, candidate_cache=cache, counts_by_object=suction_counts,
                )
                if s.object_id not in failed
            ]
            if "suction" in cfg.enabled_modes
            else []
        )
        footprints = {o.object_id: o.footprint_points() for o in live}
        try:
            action = select_action(
                grasps, suctions, ws, push_counts, footprints,
                push_limit=cfg.push_limit, allow_push=allow_push,
                protect=params.protect, push_dist=params.push_dist,
            )
        except NoCandidates:
            break
        except NothingReachable as stop:
            newly = stop.exhausted_ids - failed
            if not newly:
                break
            failed |= newly
            continue
        if action.kind == "push":
            # note: collision filtering happens against the full scene so a
            # failed-object obstacle still blocks pushes
            new_scene = _apply_push(scene, action)
            moved = np.hypot(
                new_scene.get(action.target_object).x - scene.get(action.target_object).x,
                new_scene.get(action.target_object).y - scene.get(action.target_object).y,
            )
            success = moved > 0.01
            push_counts[action.target_object] = push_counts.get(action.target_object, 0) + 1
            scene = new_scene
        else:
            success = success_oracle(action, scene, params.cup, params.fm, params.threshold)
            stats.attempts += 1
            if success:
                scene = scene.remove(action.target_object)
                stats.removed += 1
                stats.successes += 1
        stats.action_log.append(
            ActionRecord(
                step, action.kind, int(action.target_object), float(action.score),
                bool(success), scene_hash(scene),
            )
        )
        step += 1
    stats.failed_objects = failed | {o.object_id for o in scene.objects}
    stats.sr = stats.successes / stats.attempts if stats.attempts else 0.0
    stats.cr = stats.removed / n0
    return stats


def _apply_push(scene: SceneModel, action: Action) -> SceneModel:
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from .push import simulate_push

        return simulate_push(scene, to_segment(action.push), action.target_object)


def _episode_task(args):
    seed, n_objects, policy, params = args
    scene = generate_scene(seed=seed, n_objects=n_objects)
    cfg = EpisodeConfig.for_objects(n_objects, policy)
    stats = run_episode(scene, cfg, params)
    pushes: dict[int, int] = {}
    for rec in stats.action_log:
        if rec.kind == "push":
            pushes[rec.target_object] = pushes.get(rec.target_object, 0) + 1
    return seed, policy, stats.sr, stats.cr, stats.attempts, max(pushes.values(), default=0)


def compare_policies(
    seeds,
    n_objects: int,
    policies=("grasp", "suction", "gs", "pgs"),
    params: EpisodeParams | None = None,
    jobs: int = 1,
) -> list[dict]:
    """Run every policy on identical seeded scenes; report per-seed and mean
    SR/CR per policy. Deterministic regardless of the worker count."""
    if len(policies) < 2:
        raise PolicyError("compare_policies needs at least 2 policies")
    unknown = [p for p in policies if p not in POLICIES]
    if unknown:
        raise PolicyError(f"unknown policies {unknown}")
    seeds = list(seeds)
    tasks = [(seed, n_objects, policy, params) for policy in policies for seed in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_episode_task, tasks))
    else:
        results = [_episode_task(t) for t in tasks]
    by_policy = {p: {"sr": {}, "cr": {}, "attempts": {}, "pushes": {}} for p in policies}
    for seed, policy, sr, cr, attempts, max_push in results:
        by_policy[policy]["sr"][seed] = sr
        by_policy[policy]["cr"][seed] = cr
        by_policy[policy]["attempts"][seed] = attempts
        by_policy[policy]["pushes"][seed] = max_push
    report = []
    for policy in policies:
        srs = [by_policy[policy]["sr"][s] for s in seeds]
        crs = [by_policy[policy]["cr"][s] for s in seeds]
        report.append(
            {
                "policy": policy,
                "n_objects": n_objects,
                "mean_sr": float(np.mean(srs)),
                "mean_cr": float(np.mean(crs)),
                "sr": srs,
                "cr": crs,
                "max_attempts": max(by_policy[policy]["attempts"][s] for s in seeds),
                "max_pushes_per_object": max(by_policy[policy]["pushes"][s] for s in seeds),
            }
        )
    return report
