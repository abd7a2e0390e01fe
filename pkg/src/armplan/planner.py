"""RRT-Connect in normalized configuration space and the demonstration
pipeline: plan, verify by execution, extract actions, collect datasets.

Plans are piecewise-linear node sequences in [-1, 1]^7.  A demonstration
stores the trace actually executed by the episode engine while following the
plan nodes as subgoals, so replaying its actions open-loop reproduces it
exactly and reaches the goal.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .arm import ACTION_BOUND, denormalize, normalize
from .engine import Engine, GoalSpec
from .geometry import Scene, edge_collision_free, is_collision
from .tasks import (
    ParseError,
    Query,
    TaskSpec,
    build_fixed_task,
    get_task,
    realize_scene,
    sample_query,
    sample_random_boxes,
)

DEMO_SCHEMA_VERSION = 1

MAX_ATTEMPTS_PER_QUERY = 3

_TRAPPED, _ADVANCED, _REACHED = 0, 1, 2


class InvalidEndpoint(ValueError):
    """Planner asked to connect endpoints that are in collision."""


class StepTooLarge(ValueError):
    """A path step exceeds the action bound after densification."""


class VerificationFailed(RuntimeError):
    def __init__(self, step: int, reason: str):
        super().__init__(f"verification failed at step {step}: {reason}")
        self.step = step
        self.reason = reason  # "timeout" | "collision"


@dataclass(frozen=True)
class PlannerParams:
    # Extend must not equal the config-goal tolerance (0.05): tree nodes sit
    # at exact extend-step multiples from the goal, and a demo whose last
    # state lies exactly on the goal-ball boundary does not replay stably.
    max_iterations: int = 3000
    extend_step: float = 0.06  # normalized L2
    connect_tolerance: float = 1e-6
    edge_check_step: float = 0.01
    seed: int = 0
    # Sampling box; pin coordinates (lower == upper) to plan in a subspace,
    # e.g. the frozen-joint planar reduction used by the connectivity oracle.
    sample_lower: tuple = (-1.0,) * 7
    sample_upper: tuple = (1.0,) * 7

    def __post_init__(self):
        if min(self.max_iterations, self.extend_step, self.connect_tolerance, self.edge_check_step) <= 0:
            raise ValueError("planner parameters must be positive")


@dataclass(frozen=True)
class Failure:
    iterations_used: int


@dataclass
class Demonstration:
    scene_name: str
    scene_seed: int | None
    query: Query
    states: list  # normalized configurations, length K+1
    actions: list  # exact consecutive differences, length K
    verified: bool
    attempts_used: int = 1

    def __post_init__(self):
        assert len(self.actions) == len(self.states) - 1


@dataclass
class CollectionReport:
    requested: int
    collected: int = 0
    queries_tried: int = 0
    rejected_queries: int = 0
    plan_failures: int = 0
    verify_failures: int = 0
    wall_time_s: float = 0.0

    @property
    def reject_rate(self) -> float:
        return self.rejected_queries / max(1, self.queries_tried)


class _Tree:
    """Growing node array with parent links; nearest by linear scan."""

    def __init__(self, root: np.ndarray):
        self.nodes = np.empty((256, 7))
        self.nodes[0] = root
        self.size = 1
        self.parents = [-1]

    def add(self, q: np.ndarray, parent: int) -> int:
        if self.size == self.nodes.shape[0]:
            grown = np.empty((2 * self.size, 7))
            grown[: self.size] = self.nodes[: self.size]
            self.nodes = grown
        self.nodes[self.size] = q
        self.parents.append(parent)
        self.size += 1
        return self.size - 1

    def nearest(self, q: np.ndarray) -> int:
        diff = self.nodes[: self.size] - q
        return int(np.argmin(np.einsum("ij,ij->i", diff, diff)))

    def path_to_root(self, idx: int) -> list:
        out = []
        while idx >= 0:
            out.append(self.nodes[idx].copy())
            idx = self.parents[idx]
        return out


def _extend(tree: _Tree, q_target: np.ndarray, scene: Scene, params: PlannerParams, margin: float):
    near_idx = tree.nearest(q_target)
    q_near = tree.nodes[near_idx]
    dist = float(np.linalg.norm(q_target - q_near))
    if dist <= params.connect_tolerance:
        return _REACHED, near_idx
    if dist <= params.extend_step:
        q_new = q_target.copy()
        status = _REACHED
    else:
        q_new = q_near + (params.extend_step / dist) * (q_target - q_near)
        status = _ADVANCED
    if not edge_collision_free(scene, q_near, q_new, params.edge_check_step, margin):
        return _TRAPPED, -1
    return status, tree.add(q_new, near_idx)


def _connect(tree: _Tree, q_target: np.ndarray, scene: Scene, params: PlannerParams, margin: float):
    while True:
        status, idx = _extend(tree, q_target, scene, params, margin)
        if status != _ADVANCED:
            return status, idx


def rrt_connect(
    scene: Scene,
    s_start: np.ndarray,
    s_goal: np.ndarray,
    params: PlannerParams = PlannerParams(),
    margin: float = 0.0,
):
    """Bidirectional RRT between normalized configurations.

    Returns a list of nodes from s_start to s_goal on success (consecutive
    spacing <= extend_step, every edge collision-checked), else Failure.
    """
    s_start = np.asarray(s_start, dtype=float)
    s_goal = np.asarray(s_goal, dtype=float)
    lim = scene.arm.limits
    for name, s in (("start", s_start), ("goal", s_goal)):
        if is_collision(scene, denormalize(s, lim), margin):
            raise InvalidEndpoint(f"{name} configuration is in collision")
    rng = np.random.default_rng(params.seed)
    lo = np.asarray(params.sample_lower, dtype=float)
    hi = np.asarray(params.sample_upper, dtype=float)
    tree_a, tree_b = _Tree(s_start), _Tree(s_goal)
    a_is_start = True
    for it in range(params.max_iterations):
        q_rand = rng.uniform(lo, hi)
        status, new_idx = _extend(tree_a, q_rand, scene, params, margin)
        if status != _TRAPPED:
            q_new = tree_a.nodes[new_idx]
            status_b, idx_b = _connect(tree_b, q_new, scene, params, margin)
            if status_b == _REACHED:
                part_a = tree_a.path_to_root(new_idx)[::-1]
                part_b = tree_b.path_to_root(idx_b)
                path = part_a + part_b if a_is_start else part_b[::-1] + part_a[::-1]
                return _dedupe(path, params.connect_tolerance)
        tree_a, tree_b = tree_b, tree_a
        a_is_start = not a_is_start
    return Failure(iterations_used=params.max_iterations)


def _dedupe(path: list, tol: float) -> list:
    out = [path[0]]
    for node in path[1:]:
        if np.linalg.norm(node - out[-1]) > tol:
            out.append(node)
    return out


def densify_path(path, a_max: float = ACTION_BOUND) -> list:
    """Split path segments uniformly so consecutive nodes are <= a_max apart."""
    if len(path) < 2:
        return [np.asarray(p, dtype=float).copy() for p in path]
    out = [np.asarray(path[0], dtype=float).copy()]
    for node in path[1:]:
        node = np.asarray(node, dtype=float)
        prev = out[-1]
        dist = float(np.linalg.norm(node - prev))
        pieces = max(1, int(np.ceil(dist / a_max)))
        for k in range(1, pieces + 1):
            out.append(prev + (k / pieces) * (node - prev))
    return out


def path_to_actions(path, a_max: float = ACTION_BOUND) -> list:
    """Exact consecutive differences of the densified path."""
    if len(path) < 2:
        raise ValueError("path must contain at least two nodes")
    dense = densify_path(path, a_max)
    actions = [dense[i + 1] - dense[i] for i in range(len(dense) - 1)]
    for i, a in enumerate(actions):
        if float(np.linalg.norm(a)) > a_max + 1e-12:
            raise StepTooLarge(f"step {i} has norm {np.linalg.norm(a)} > {a_max}")
    return actions


def verify_plan(
    engine: Engine,
    query: Query,
    path,
    node_tolerance: float = 1e-9,
) -> Demonstration:
    """Execute a plan as subgoals through the episode engine.

    Succeeds when the engine's goal predicate fires within the horizon; the
    demonstration stores the executed state/action trace, not the raw plan.
    Raises VerificationFailed(step, reason) on collision or timeout.
    """
    state = engine.reset(query)
    states = [state.s.copy()]
    actions: list = []
    if engine.done:
        return _demo_from(engine, query, states, actions)
    for node in path[1:]:
        node = np.asarray(node, dtype=float)
        while float(np.linalg.norm(node - engine.state.s)) > node_tolerance:
            tr = engine.step(node, mode=Engine.SUBGOAL)
            if tr.collided:
                raise VerificationFailed(len(actions), "collision")
            states.append(tr.next_state.s.copy())
            actions.append(tr.next_state.s - tr.state.s)
            if tr.success:
                return _demo_from(engine, query, states, actions)
            if tr.done:
                raise VerificationFailed(len(actions), "timeout")
    raise VerificationFailed(len(actions), "timeout")


def _demo_from(engine: Engine, query: Query, states, actions) -> Demonstration:
    return Demonstration(
        scene_name=engine.scene.name,
        scene_seed=engine.scene.seed,
        query=query,
        states=states,
        actions=actions,
        verified=True,
    )


def collect_demos(
    task: TaskSpec,
    n: int,
    rng: np.random.Generator,
    params: PlannerParams = PlannerParams(),
    arm=None,
):
    """Sample queries, plan, and verify until n demonstrations are collected.

    At most three attempts (fresh planner seeds) per query before rejecting
    it.  Returns (demos, CollectionReport).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    t0 = time.perf_counter()
    report = CollectionReport(requested=n)
    demos: list[Demonstration] = []
    fixed_scene = build_fixed_task(task.name, arm=arm) if task.scene_kind == "fixed" else None
    while len(demos) < n:
        scene = fixed_scene if fixed_scene is not None else realize_scene(task, rng, arm=arm)
        try:
            query = sample_query(scene, rng, margin=task.collision_margin)
        except Exception:
            report.queries_tried += 1
            report.rejected_queries += 1
            continue
        report.queries_tried += 1
        lim = scene.arm.limits
        s_start = normalize(query.start, lim)
        s_goal = normalize(query.goal_config, lim)
        for attempt in range(1, MAX_ATTEMPTS_PER_QUERY + 1):
            attempt_params = replace(params, seed=int(rng.integers(0, 2**62)))
            path = rrt_connect(scene, s_start, s_goal, attempt_params, task.collision_margin)
            if isinstance(path, Failure):
                report.plan_failures += 1
                continue
            try:
                demo = verify_plan(Engine(scene, task), query, path)
            except VerificationFailed:
                report.verify_failures += 1
                continue
            demo.attempts_used = attempt
            demos.append(demo)
            break
        else:
            report.rejected_queries += 1
    report.collected = len(demos)
    report.wall_time_s = time.perf_counter() - t0
    return demos, report


# ---------------------------------------------------------------------------
# Demo dataset files
# ---------------------------------------------------------------------------

def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values, dtype=float).ravel())


def save_demos(path, demos, task: TaskSpec, params: PlannerParams = PlannerParams()) -> None:
    lines = [
        "# armplan demonstration dataset",
        f"schema_version {DEMO_SCHEMA_VERSION}",
        f"task {task.name}",
        f"goal_representation {task.goal_spec.representation}",
        f"ee_tolerance {task.goal_spec.ee_tolerance!r}",
        f"config_tolerance {task.goal_spec.config_tolerance!r}",
        f"horizon {task.horizon}",
        f"stop_on_collision {int(task.stop_on_collision)}",
        f"collision_margin {task.collision_margin!r}",
        f"action_bound {ACTION_BOUND!r}",
        f"extend_step {params.extend_step!r}",
        f"count {len(demos)}",
    ]
    for d in demos:
        seed = "-" if d.scene_seed is None else d.scene_seed
        lines.append(f"demo {d.scene_name} {seed} {d.attempts_used} {len(d.actions)}")
        lines.append(f"q {_fmt(d.query.start)} {_fmt(d.query.goal_config)} {_fmt(d.query.goal_ee)}")
        for s in d.states:
            lines.append(f"s {_fmt(s)}")
        for a in d.actions:
            lines.append(f"a {_fmt(a)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_demos(path, verify: bool = False, arm=None):
    """Load a demo dataset; returns (demos, task).

    With verify=True every demonstration is replayed open-loop through a
    fresh engine and must reach its goal without collisions.
    """
    lines = Path(path).read_text().splitlines()
    header: dict = {}
    demos: list[Demonstration] = []
    i = 0
    n_lines = len(lines)

    def parse_error(line_no, msg):
        raise ParseError(path, line_no, msg)

    while i < n_lines:
        raw = lines[i].strip()
        i += 1
        if not raw or raw.startswith("#"):
            continue
        key, *tok = raw.split()
        if key == "demo":
            if "schema_version" not in header:
                parse_error(i, "demo record before schema_version")
            scene_name = tok[0]
            scene_seed = None if tok[1] == "-" else int(tok[1])
            attempts = int(tok[2])
            k = int(tok[3])
            q_line = lines[i].split()
            if q_line[0] != "q":
                parse_error(i + 1, "expected q record")
            vals = [float(t) for t in q_line[1:]]
            if len(vals) != 17:
                parse_error(i + 1, "q record needs 17 numbers")
            query = Query(vals[0:7], vals[7:14], vals[14:17])
            i += 1
            states = []
            for j in range(k + 1):
                s_line = lines[i].split()
                if s_line[0] != "s":
                    parse_error(i + 1, f"expected s record {j}")
                states.append(np.array([float(t) for t in s_line[1:]]))
                i += 1
            actions = []
            for j in range(k):
                a_line = lines[i].split()
                if a_line[0] != "a":
                    parse_error(i + 1, f"expected a record {j}")
                actions.append(np.array([float(t) for t in a_line[1:]]))
                i += 1
            demo = Demonstration(
                scene_name=scene_name,
                scene_seed=scene_seed,
                query=query,
                states=states,
                actions=actions,
                verified=True,
                attempts_used=attempts,
            )
            for s, a, s2 in zip(states[:-1], actions, states[1:]):
                if not np.array_equal(s + a, s2):
                    parse_error(i, "action is not the exact state difference")
            demos.append(demo)
        elif key == "schema_version":
            if int(tok[0]) != DEMO_SCHEMA_VERSION:
                parse_error(i, f"unsupported schema_version {tok[0]}")
            header[key] = int(tok[0])
        elif key in ("task", "goal_representation"):
            header[key] = tok[0]
        elif key in ("ee_tolerance", "config_tolerance", "collision_margin", "action_bound", "extend_step"):
            header[key] = float(tok[0])
        elif key in ("horizon", "count", "stop_on_collision"):
            header[key] = int(tok[0])
        else:
            parse_error(i, f"unknown record {key!r}")
    if header.get("count") != len(demos):
        raise ParseError(path, 0, f"count {header.get('count')} != {len(demos)} demos")
    goal_spec = GoalSpec(
        representation=header["goal_representation"],
        ee_tolerance=header["ee_tolerance"],
        config_tolerance=header["config_tolerance"],
    )
    task = get_task(
        header["task"],
        goal_spec=goal_spec,
        horizon=header["horizon"],
        stop_on_collision=bool(header["stop_on_collision"]),
        collision_margin=header["collision_margin"],
    )
    if verify:
        for idx, demo in enumerate(demos):
            if not replay_demo(demo, task, arm=arm):
                raise ParseError(path, 0, f"demo {idx} failed open-loop re-verification")
    return demos, task


def demo_scene(demo: Demonstration, task: TaskSpec, arm=None) -> Scene:
    """Reconstruct the scene a demonstration was collected in."""
    if task.scene_kind == "fixed":
        return build_fixed_task(task.name, arm=arm)
    if demo.scene_seed is None:
        raise ValueError("sampled-scene demo lacks a scene seed")
    return sample_random_boxes(
        task.difficulty, np.random.default_rng(demo.scene_seed), arm=arm, seed=demo.scene_seed
    )


def replay_demo(demo: Demonstration, task: TaskSpec, arm=None) -> bool:
    """Open-loop replay: feed stored actions; True iff goal reached, no collision."""
    scene = demo_scene(demo, task, arm=arm)
    engine = Engine(scene, task)
    engine.reset(demo.query)
    if engine.done:
        return engine.success and not demo.actions
    for a in demo.actions:
        tr = engine.step(a, mode=Engine.RELATIVE)
        if tr.collided:
            return False
        if tr.done:
            return tr.success
    return engine.success
