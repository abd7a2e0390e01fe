"""Kinematic model of a 7-DoF serial arm.

Joint configurations are plain float64 arrays: ``c`` denotes a configuration
in radians, ``s`` its normalized image in [-1, 1]^7 under the joint-limit
affine map.  All functions here are pure and safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

# Per-step motion bound in normalized configuration space (L2).
ACTION_BOUND = 0.03

NUM_JOINTS = 7

ARM_SCHEMA_VERSION = 1


class OutOfLimits(ValueError):
    """A configuration component lies outside the joint limits."""


class OutOfRange(ValueError):
    """A normalized component lies outside [-1, 1]."""


class ArmFileError(ValueError):
    """Malformed arm parameter file."""


@dataclass(frozen=True)
class JointLimits:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != (NUM_JOINTS,) or upper.shape != (NUM_JOINTS,):
            raise ValueError("joint limits must be 7-vectors")
        if not (np.isfinite(lower).all() and np.isfinite(upper).all()):
            raise ValueError("joint limits must be finite")
        if not (lower < upper).all():
            raise ValueError("each lower limit must be below its upper limit")

    @property
    def span(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.upper + self.lower)

    def contains(self, c: np.ndarray) -> bool:
        c = np.asarray(c, dtype=float)
        return bool((c >= self.lower).all() and (c <= self.upper).all())


@dataclass(frozen=True)
class LinkCapsule:
    """Collision capsule fixed in a link frame (0 = base, 1..7 = joints)."""

    link: int
    p0: np.ndarray
    p1: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float))
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=float))
        if self.radius <= 0.0:
            raise ValueError("capsule radius must be positive")
        if not 0 <= self.link <= NUM_JOINTS:
            raise ValueError("capsule link index out of range")


@dataclass(eq=False)
class ArmGeometry:
    """Kinematic chain plus collision model, loaded from the parameter file."""

    name: str
    limits: JointLimits
    dh: np.ndarray  # (7, 3) rows of (a, d, alpha) in modified-DH convention
    flange: np.ndarray  # (3,) final fixed (a, d, alpha) row
    base: np.ndarray  # (3,) fixed mount (a, d, alpha) row applied before joint 1
    home: np.ndarray  # (7,) reference collision-free configuration
    capsules: tuple[LinkCapsule, ...]
    self_pairs: tuple[tuple[int, int], ...]
    world_exempt: frozenset[int] = field(default_factory=frozenset)
    schema_version: int = ARM_SCHEMA_VERSION

    def __post_init__(self):
        self.dh = np.asarray(self.dh, dtype=float)
        self.flange = np.asarray(self.flange, dtype=float)
        self.base = np.asarray(self.base, dtype=float)
        self.home = np.asarray(self.home, dtype=float)
        if self.dh.shape != (NUM_JOINTS, 3):
            raise ValueError("expected 7 modified-DH joint rows")
        for i, j in self.self_pairs:
            if abs(i - j) < 2:
                raise ValueError(f"self-collision pair ({i}, {j}) is adjacent")

    @cached_property
    def base_matrix(self) -> np.ndarray:
        a, d, alpha = self.base
        return _joint_matrix(a, d, math.cos(alpha), math.sin(alpha), 0.0)

    @cached_property
    def _flange_matrix(self) -> np.ndarray:
        a, d, alpha = self.flange
        return _joint_matrix(a, d, math.cos(alpha), math.sin(alpha), 0.0)

    @cached_property
    def _rows(self) -> np.ndarray:
        # (8, 5): a, d, cos(alpha), sin(alpha) per joint row plus the flange
        rows = np.vstack([self.dh, self.flange[None, :]])
        return np.column_stack(
            [rows[:, 0], rows[:, 1], np.cos(rows[:, 2]), np.sin(rows[:, 2])]
        )

    @cached_property
    def capsule_arrays(self):
        """Packed (links, p0s, p1s, radii, world_check) arrays for batch work."""
        links = np.array([c.link for c in self.capsules], dtype=int)
        p0 = np.stack([c.p0 for c in self.capsules])
        p1 = np.stack([c.p1 for c in self.capsules])
        radii = np.array([c.radius for c in self.capsules])
        world = np.array([c.link not in self.world_exempt for c in self.capsules])
        return links, p0, p1, radii, world

    @cached_property
    def self_pair_indices(self) -> np.ndarray:
        """(P, 2) capsule index pairs expanded from the link pair allowlist."""
        by_link: dict[int, list[int]] = {}
        for idx, cap in enumerate(self.capsules):
            by_link.setdefault(cap.link, []).append(idx)
        pairs = []
        for i, j in self.self_pairs:
            for ia in by_link.get(i, ()):
                for ib in by_link.get(j, ()):
                    pairs.append((ia, ib))
        return np.array(pairs, dtype=int).reshape(-1, 2)


def _data_path(name: str) -> Path:
    return Path(str(resources.files("armplan").joinpath("data", name)))


def _parse_floats(tokens, n, path, line_no):
    if len(tokens) != n:
        raise ArmFileError(f"{path}:{line_no}: expected {n} values, got {len(tokens)}")
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise ArmFileError(f"{path}:{line_no}: {exc}") from None


@lru_cache(maxsize=8)
def load_arm(path: str | None = None) -> ArmGeometry:
    """Load an arm parameter file; defaults to the packaged 7-DoF model."""
    src = Path(path) if path is not None else _data_path("arm_params.txt")
    fields: dict[str, list] = {"dh": [], "capsule": [], "self_pair": [], "world_exempt": []}
    scalars: dict[str, object] = {}
    for line_no, raw in enumerate(src.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, *tokens = line.split()
        if key in ("schema_version", "joints"):
            scalars[key] = int(tokens[0])
        elif key == "name":
            scalars[key] = tokens[0]
        elif key in ("limit_lower", "limit_upper", "home"):
            scalars[key] = np.array(_parse_floats(tokens, NUM_JOINTS, src, line_no))
        elif key in ("dh", "flange", "base"):
            row = _parse_floats(tokens, 3, src, line_no)
            if key == "dh":
                fields["dh"].append(row)
            else:
                scalars[key] = np.array(row)
        elif key == "capsule":
            vals = _parse_floats(tokens, 8, src, line_no)
            fields["capsule"].append(
                LinkCapsule(int(vals[0]), vals[1:4], vals[4:7], vals[7])
            )
        elif key == "self_pair":
            fields["self_pair"].append((int(tokens[0]), int(tokens[1])))
        elif key == "world_exempt":
            fields["world_exempt"].extend(int(t) for t in tokens)
        else:
            raise ArmFileError(f"{src}:{line_no}: unknown key {key!r}")
    if scalars.get("schema_version") != ARM_SCHEMA_VERSION:
        raise ArmFileError(f"{src}: unsupported schema_version {scalars.get('schema_version')}")
    missing = {"name", "limit_lower", "limit_upper", "flange", "home"} - set(scalars)
    if missing:
        raise ArmFileError(f"{src}: missing keys {sorted(missing)}")
    return ArmGeometry(
        name=scalars["name"],
        limits=JointLimits(scalars["limit_lower"], scalars["limit_upper"]),
        dh=np.array(fields["dh"]),
        flange=scalars["flange"],
        base=scalars.get("base", np.zeros(3)),
        home=scalars["home"],
        capsules=tuple(fields["capsule"]),
        self_pairs=tuple(fields["self_pair"]),
        world_exempt=frozenset(fields["world_exempt"]),
        schema_version=scalars["schema_version"],
    )


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def normalize(c: np.ndarray, lim: JointLimits) -> np.ndarray:
    """Map a configuration in radians to [-1, 1]^7: s = (2c - (M+m)) / (M-m)."""
    c = np.asarray(c, dtype=float)
    if not lim.contains(c):
        raise OutOfLimits(f"configuration {c} outside joint limits")
    s = (2.0 * c - (lim.upper + lim.lower)) / lim.span
    return np.clip(s, -1.0, 1.0)


def denormalize(s: np.ndarray, lim: JointLimits) -> np.ndarray:
    """Inverse of :func:`normalize`."""
    s = np.asarray(s, dtype=float)
    if (np.abs(s) > 1.0).any():
        raise OutOfRange(f"normalized configuration {s} outside [-1, 1]")
    c = 0.5 * (s * lim.span + (lim.upper + lim.lower))
    return np.clip(c, lim.lower, lim.upper)


def denormalize_batch(s: np.ndarray, lim: JointLimits) -> np.ndarray:
    """Vectorized denormalize for (N, 7) inputs; no range checks."""
    c = 0.5 * (np.asarray(s, dtype=float) * lim.span + (lim.upper + lim.lower))
    return np.clip(c, lim.lower, lim.upper)


# ---------------------------------------------------------------------------
# Forward kinematics
# ---------------------------------------------------------------------------

def _joint_matrix(a, d, ca, sa, theta):
    ct, st = math.cos(theta), math.sin(theta)
    return np.array(
        [
            [ct, -st, 0.0, a],
            [st * ca, ct * ca, -sa, -d * sa],
            [st * sa, ct * sa, ca, d * ca],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def forward_kinematics(c: np.ndarray, geom: ArmGeometry):
    """World poses of the base, joint, and flange frames, plus EE position.

    Returns (poses, ee) where poses is a list of nine 4x4 transforms:
    index 0 is the base frame, 1..7 the joint frames, 8 the flange.  The
    input is not limit-checked; planner probes may exceed limits.
    """
    c = np.asarray(c, dtype=float)
    rows = geom._rows
    world = geom.base_matrix.copy()
    poses = [world.copy()]
    for i in range(NUM_JOINTS):
        a, d, ca, sa = rows[i]
        world = world @ _joint_matrix(a, d, ca, sa, c[i])
        poses.append(world)
    a, d, ca, sa = rows[NUM_JOINTS]
    world = world @ _joint_matrix(a, d, ca, sa, 0.0)
    poses.append(world)
    return poses, world[:3, 3].copy()


def link_poses_batch(configs: np.ndarray, geom: ArmGeometry) -> np.ndarray:
    """(N, 9, 4, 4) world poses for configurations stacked as (N, 7)."""
    configs = np.atleast_2d(np.asarray(configs, dtype=float))
    n = configs.shape[0]
    rows = geom._rows
    a, d, ca, sa = rows[:NUM_JOINTS].T
    ct = np.cos(configs)
    st = np.sin(configs)
    # all joint matrices in one pass: (N, 7, 4, 4)
    m = np.zeros((n, NUM_JOINTS, 4, 4))
    m[:, :, 0, 0] = ct
    m[:, :, 0, 1] = -st
    m[:, :, 0, 3] = a
    m[:, :, 1, 0] = st * ca
    m[:, :, 1, 1] = ct * ca
    m[:, :, 1, 2] = -sa
    m[:, :, 1, 3] = -d * sa
    m[:, :, 2, 0] = st * sa
    m[:, :, 2, 1] = ct * sa
    m[:, :, 2, 2] = ca
    m[:, :, 2, 3] = d * ca
    m[:, :, 3, 3] = 1.0
    out = np.empty((n, NUM_JOINTS + 2, 4, 4))
    out[:, 0] = geom.base_matrix
    for i in range(NUM_JOINTS):
        np.matmul(out[:, i], m[:, i], out=out[:, i + 1])
    np.matmul(out[:, NUM_JOINTS], geom._flange_matrix, out=out[:, NUM_JOINTS + 1])
    return out


def ee_position(c: np.ndarray, geom: ArmGeometry) -> np.ndarray:
    return forward_kinematics(c, geom)[1]


def ee_position_batch(configs: np.ndarray, geom: ArmGeometry) -> np.ndarray:
    return link_poses_batch(configs, geom)[:, -1, :3, 3]


def world_capsules_batch(configs: np.ndarray, geom: ArmGeometry):
    """World-frame capsule endpoints for (N, 7) configurations.

    Returns (e0, e1, radii, world_check): endpoints are (N, L, 3).
    """
    poses = link_poses_batch(configs, geom)[:, geom.capsule_arrays[0]]  # (N, L, 4, 4)
    links, p0, p1, radii, world = geom.capsule_arrays
    rot = poses[:, :, :3, :3]
    trans = poses[:, :, :3, 3]
    e0 = np.einsum("nlij,lj->nli", rot, p0) + trans
    e1 = np.einsum("nlij,lj->nli", rot, p1) + trans
    return e0, e1, radii, world


# ---------------------------------------------------------------------------
# Actions
# ---------------------------------------------------------------------------

def clip_action(delta: np.ndarray, a_max: float = ACTION_BOUND) -> np.ndarray:
    """Scale a displacement down to L2 norm a_max, preserving direction."""
    if a_max <= 0.0:
        raise ValueError("a_max must be positive")
    delta = np.asarray(delta, dtype=float)
    norm = float(np.linalg.norm(delta))
    if norm <= a_max:
        return delta.copy()
    return delta * (a_max / norm)
