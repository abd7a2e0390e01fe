"""Task registry, scene construction, query sampling, and file formats.

Fixed tasks are built from the packaged scene parameter file; random-box
tasks sample obstacle sets from the declared distribution.  All samplers
take an explicit RNG handle and consume draws in a fixed order, so a given
seed reproduces a scene bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .arm import ArmGeometry, ee_position, load_arm, world_capsules_batch
from .engine import DEFAULT_HORIZON, GoalSpec
from .geometry import (
    STATIC,
    VARYING,
    Box,
    Capsule,
    Plane,
    Scene,
    capsule_box_distance,
    is_collision,
)

SCENE_SCHEMA_VERSION = 1
QUERY_SCHEMA_VERSION = 1
PARAMS_SCHEMA_VERSION = 1

FIXED_TASKS = (
    "no_obstacles",
    "wall",
    "double_wall_wide_gap",
    "double_walls",
    "boxes",
    "narrow_shelves",
    "three_shelves",
    "pole_shelves",
)
SAMPLER_TASKS = ("random_boxes_easy", "random_boxes_medium", "random_boxes_hard")
OOD_TASKS = ("narrow_shelves", "three_shelves", "pole_shelves")


class UnknownTask(KeyError):
    pass


class Infeasible(RuntimeError):
    """Query sampling exhausted its rejection budget."""


class ParseError(ValueError):
    """Malformed scene/query/demo file; message carries file:line context."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


@dataclass(frozen=True)
class SceneParams:
    table_offset: float
    floor_offset: float
    box_counts: dict  # difficulty -> (lo, hi) inclusive
    box_half_extent_range: tuple[float, float]
    box_annulus: tuple[float, float]
    box_home_clearance: float
    box_yaw_range: tuple[float, float]
    task_boxes: dict  # task name -> tuple of Box


@dataclass(frozen=True)
class Query:
    start: np.ndarray  # radians
    goal_config: np.ndarray  # radians
    goal_ee: np.ndarray  # meters, FK of goal_config

    def __post_init__(self):
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float))
        object.__setattr__(self, "goal_config", np.asarray(self.goal_config, dtype=float))
        object.__setattr__(self, "goal_ee", np.asarray(self.goal_ee, dtype=float))


@dataclass(frozen=True)
class TaskSpec:
    name: str
    scene_kind: str  # "fixed" | "sampler"
    difficulty: str | None = None
    goal_spec: GoalSpec = field(default_factory=GoalSpec)
    horizon: int = DEFAULT_HORIZON
    stop_on_collision: bool = False
    collision_margin: float = 0.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.scene_kind not in ("fixed", "sampler"):
            raise ValueError(f"unknown scene kind {self.scene_kind!r}")


def _data_path(name: str) -> Path:
    from importlib import resources

    return Path(str(resources.files("armplan").joinpath("data", name)))


@lru_cache(maxsize=4)
def load_scene_params(path: str | None = None) -> SceneParams:
    src = Path(path) if path is not None else _data_path("scene_params.txt")
    values: dict = {"task_boxes": {}}
    counts: dict = {}
    for line_no, raw in enumerate(src.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, *tok = line.split()
        try:
            if key == "schema_version":
                if int(tok[0]) != PARAMS_SCHEMA_VERSION:
                    raise ParseError(src, line_no, f"unsupported schema_version {tok[0]}")
                values[key] = int(tok[0])
            elif key in ("table_offset", "floor_offset", "box_home_clearance"):
                values[key] = float(tok[0])
            elif key.startswith("box_count_"):
                counts[key.removeprefix("box_count_")] = (int(tok[0]), int(tok[1]))
            elif key in ("box_half_extent_range", "box_annulus", "box_yaw_range"):
                values[key] = (float(tok[0]), float(tok[1]))
            elif key == "task_box":
                name = tok[0]
                vals = [float(t) for t in tok[1:]]
                if len(vals) != 7:
                    raise ParseError(src, line_no, "task_box needs 7 numbers after the name")
                box = Box(vals[0:3], vals[3:6], vals[6], label=STATIC)
                values["task_boxes"].setdefault(name, []).append(box)
            else:
                raise ParseError(src, line_no, f"unknown key {key!r}")
        except (ValueError, IndexError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(src, line_no, str(exc)) from None
    if "schema_version" not in values:
        raise ParseError(src, 0, "missing schema_version")
    return SceneParams(
        table_offset=values["table_offset"],
        floor_offset=values["floor_offset"],
        box_counts=counts,
        box_half_extent_range=values["box_half_extent_range"],
        box_annulus=values["box_annulus"],
        box_home_clearance=values["box_home_clearance"],
        box_yaw_range=values["box_yaw_range"],
        task_boxes={k: tuple(v) for k, v in values["task_boxes"].items()},
    )


def task_names() -> tuple[str, ...]:
    return FIXED_TASKS + SAMPLER_TASKS


def get_task(name: str, goal_spec: GoalSpec | None = None, **overrides) -> TaskSpec:
    if name in FIXED_TASKS:
        spec = TaskSpec(name=name, scene_kind="fixed")
    elif name in SAMPLER_TASKS:
        spec = TaskSpec(name=name, scene_kind="sampler", difficulty=name.removeprefix("random_boxes_"))
    else:
        raise UnknownTask(name)
    if goal_spec is not None:
        spec = replace(spec, goal_spec=goal_spec)
    if overrides:
        spec = replace(spec, **overrides)
    return spec


def _base_planes(params: SceneParams) -> tuple[Plane, Plane]:
    up = np.array([0.0, 0.0, 1.0])
    return (
        Plane(up, params.table_offset, label=STATIC),
        Plane(up, params.floor_offset, label=STATIC),
    )


def build_fixed_task(name: str, arm: ArmGeometry | None = None) -> Scene:
    """Deterministic scene for a fixed task; table and floor always included."""
    if name not in FIXED_TASKS:
        raise UnknownTask(name)
    arm = arm or load_arm()
    params = load_scene_params()
    obstacles: tuple = _base_planes(params)
    obstacles += params.task_boxes.get(name, ())
    return Scene(name=name, obstacles=obstacles, arm=arm)


def _home_capsules(arm: ArmGeometry):
    e0, e1, radii, _ = world_capsules_batch(arm.home[None], arm)
    return [Capsule(e0[0, i], e1[0, i], radii[i]) for i in range(len(radii))]


def sample_random_boxes(
    difficulty: str,
    rng: np.random.Generator,
    arm: ArmGeometry | None = None,
    seed: int | None = None,
) -> Scene:
    """Scene with a uniform count of boxes scattered in the workspace annulus.

    Boxes that would trap the home pose are rejected and resampled.  ``seed``
    is recorded on the scene for provenance only; pass the generator that was
    built from it.
    """
    if difficulty not in ("easy", "medium", "hard"):
        raise UnknownTask(f"random_boxes_{difficulty}")
    arm = arm or load_arm()
    params = load_scene_params()
    lo, hi = params.box_counts[difficulty]
    count = int(rng.integers(lo, hi + 1))
    home_caps = _home_capsules(arm)
    h_lo, h_hi = params.box_half_extent_range
    r_lo, r_hi = params.box_annulus
    y_lo, y_hi = params.box_yaw_range
    boxes = []
    for _ in range(count):
        for _ in range(200):
            radius = rng.uniform(r_lo, r_hi)
            angle = rng.uniform(0.0, 2.0 * math.pi)
            half = rng.uniform(h_lo, h_hi, size=3)
            yaw = rng.uniform(y_lo, y_hi)
            center = np.array(
                [radius * math.cos(angle), radius * math.sin(angle), params.table_offset + half[2]]
            )
            box = Box(center, half, yaw, label=VARYING)
            clear = min(capsule_box_distance(cap, box) for cap in home_caps)
            if clear > params.box_home_clearance:
                boxes.append(box)
                break
        else:
            raise Infeasible("could not place a box clear of the home pose")
    return Scene(
        name=f"random_boxes_{difficulty}",
        obstacles=_base_planes(params) + tuple(boxes),
        arm=arm,
        seed=seed,
    )


def realize_scene(task: TaskSpec, rng: np.random.Generator, arm: ArmGeometry | None = None) -> Scene:
    """Scene for an episode of this task: fixed scenes verbatim, samplers fresh."""
    if task.scene_kind == "fixed":
        return build_fixed_task(task.name, arm=arm)
    scene_seed = int(rng.integers(0, 2**62))
    return sample_random_boxes(
        task.difficulty, np.random.default_rng(scene_seed), arm=arm, seed=scene_seed
    )


def sample_query(
    scene: Scene,
    rng: np.random.Generator,
    max_tries: int = 200,
    margin: float = 0.0,
) -> Query:
    """Rejection-sample a collision-free (start, goal) pair, uniform in limits."""
    if max_tries < 1:
        raise ValueError("max_tries must be >= 1")
    lim = scene.arm.limits

    def draw(tag):
        for _ in range(max_tries):
            c = rng.uniform(lim.lower, lim.upper)
            if not is_collision(scene, c, margin):
                return c
        raise Infeasible(f"no feasible {tag} configuration in {max_tries} tries")

    start = draw("start")
    goal = draw("goal")
    return Query(start=start, goal_config=goal, goal_ee=ee_position(goal, scene.arm))


# ---------------------------------------------------------------------------
# Serialization: scenes and query sets
# ---------------------------------------------------------------------------

def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values, dtype=float).ravel())


def save_scene(path, scene: Scene) -> None:
    lines = [
        "# armplan scene file",
        f"schema_version {SCENE_SCHEMA_VERSION}",
        f"name {scene.name}",
        f"seed {'-' if scene.seed is None else scene.seed}",
        f"arm {scene.arm.name}",
    ]
    for obs in scene.obstacles:
        if isinstance(obs, Plane):
            lines.append(f"plane {obs.label} {_fmt(obs.normal)} {float(obs.offset)!r}")
        else:
            lines.append(
                f"box {obs.label} {_fmt(obs.center)} {_fmt(obs.half_extents)} {float(obs.yaw)!r}"
            )
    Path(path).write_text("\n".join(lines) + "\n")


def load_scene(path, arm: ArmGeometry | None = None) -> Scene:
    arm = arm or load_arm()
    meta: dict = {}
    obstacles: list = []
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, *tok = line.split()
        try:
            if key == "schema_version":
                if int(tok[0]) != SCENE_SCHEMA_VERSION:
                    raise ParseError(path, line_no, f"unsupported schema_version {tok[0]}")
            elif key == "name":
                meta["name"] = tok[0]
            elif key == "seed":
                meta["seed"] = None if tok[0] == "-" else int(tok[0])
            elif key == "arm":
                if tok[0] != arm.name:
                    raise ParseError(path, line_no, f"scene expects arm {tok[0]!r}, have {arm.name!r}")
            elif key == "plane":
                vals = [float(t) for t in tok[1:]]
                if len(vals) != 4:
                    raise ParseError(path, line_no, "plane needs label + 4 numbers")
                obstacles.append(Plane(vals[0:3], vals[3], label=tok[0]))
            elif key == "box":
                vals = [float(t) for t in tok[1:]]
                if len(vals) != 7:
                    raise ParseError(path, line_no, "box needs label + 7 numbers")
                obstacles.append(Box(vals[0:3], vals[3:6], vals[6], label=tok[0]))
            else:
                raise ParseError(path, line_no, f"unknown record {key!r}")
        except (ValueError, IndexError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(path, line_no, str(exc)) from None
    if "name" not in meta:
        raise ParseError(path, 0, "missing name record")
    return Scene(name=meta["name"], obstacles=tuple(obstacles), arm=arm, seed=meta.get("seed"))


def save_queries(path, queries, task_name: str, seed: int | None = None) -> None:
    lines = [
        "# armplan query file",
        f"schema_version {QUERY_SCHEMA_VERSION}",
        f"task {task_name}",
        f"seed {'-' if seed is None else seed}",
        f"count {len(queries)}",
    ]
    for q in queries:
        lines.append(f"query {_fmt(q.start)} {_fmt(q.goal_config)} {_fmt(q.goal_ee)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_queries(path):
    """Returns (queries, task_name, seed)."""
    queries: list[Query] = []
    meta: dict = {}
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, *tok = line.split()
        try:
            if key == "schema_version":
                if int(tok[0]) != QUERY_SCHEMA_VERSION:
                    raise ParseError(path, line_no, f"unsupported schema_version {tok[0]}")
                meta["schema"] = True
            elif key == "task":
                meta["task"] = tok[0]
            elif key == "seed":
                meta["seed"] = None if tok[0] == "-" else int(tok[0])
            elif key == "count":
                meta["count"] = int(tok[0])
            elif key == "query":
                vals = [float(t) for t in tok]
                if len(vals) != 17:
                    raise ParseError(path, line_no, f"query needs 17 numbers, got {len(vals)}")
                queries.append(Query(vals[0:7], vals[7:14], vals[14:17]))
            else:
                raise ParseError(path, line_no, f"unknown record {key!r}")
        except (ValueError, IndexError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(path, line_no, str(exc)) from None
    if "schema" not in meta:
        raise ParseError(path, 0, "missing schema_version")
    if meta.get("count") != len(queries):
        raise ParseError(path, 0, f"count {meta.get('count')} != {len(queries)} query records")
    return queries, meta.get("task"), meta.get("seed")
