"""Collision primitives and the scene collision predicate.

Obstacles are yaw-rotated boxes and half-space planes.  A configuration is
in collision when any arm capsule comes within ``margin`` of an obstacle
surface or when an allowed self-collision pair does.  Scenes are immutable
after construction and all queries are pure functions, so everything here is
thread-safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .arm import ArmGeometry, denormalize_batch, load_arm, world_capsules_batch

STATIC = "static"
VARYING = "varying"

# Interpolation step (normalized L2) for edge checks: one third of the
# per-step action bound, so a single env step is covered by >= 3 checks.
DEFAULT_EDGE_STEP = 0.01

_TINY = 1e-30


@dataclass(frozen=True)
class Capsule:
    p0: np.ndarray
    p1: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float))
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=float))
        if self.radius <= 0.0:
            raise ValueError("capsule radius must be positive")


@dataclass(frozen=True)
class Box:
    """Axis-aligned box rotated by yaw about world z."""

    center: np.ndarray
    half_extents: np.ndarray
    yaw: float = 0.0
    label: str = VARYING

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "half_extents", np.asarray(self.half_extents, dtype=float))
        if (self.half_extents <= 0.0).any():
            raise ValueError("box half-extents must be positive")
        if self.label not in (STATIC, VARYING):
            raise ValueError(f"unknown obstacle label {self.label!r}")


@dataclass(frozen=True)
class Plane:
    """Solid half-space {p : n.p <= offset} with unit outward normal n."""

    normal: np.ndarray
    offset: float
    label: str = STATIC

    def __post_init__(self):
        normal = np.asarray(self.normal, dtype=float)
        object.__setattr__(self, "normal", normal)
        if abs(np.linalg.norm(normal) - 1.0) > 1e-9:
            raise ValueError("plane normal must be unit length")
        if self.label not in (STATIC, VARYING):
            raise ValueError(f"unknown obstacle label {self.label!r}")


Obstacle = Box | Plane


@dataclass(eq=False)
class Scene:
    """Immutable obstacle set plus the arm it is checked against."""

    name: str
    obstacles: tuple[Obstacle, ...]
    arm: ArmGeometry = field(default_factory=load_arm)
    seed: int | None = None

    def __post_init__(self):
        self.obstacles = tuple(self.obstacles)

    @property
    def boxes(self) -> tuple[Box, ...]:
        return tuple(o for o in self.obstacles if isinstance(o, Box))

    @property
    def planes(self) -> tuple[Plane, ...]:
        return tuple(o for o in self.obstacles if isinstance(o, Plane))

    @cached_property
    def _plane_arrays(self):
        planes = self.planes
        if not planes:
            return np.zeros((0, 3)), np.zeros(0)
        return np.stack([p.normal for p in planes]), np.array([p.offset for p in planes])

    @cached_property
    def _box_frames(self):
        """Per-box (center, half, cos_yaw, sin_yaw, circumradius) tuples."""
        return [
            (
                b.center,
                b.half_extents,
                math.cos(b.yaw),
                math.sin(b.yaw),
                float(np.linalg.norm(b.half_extents)),
            )
            for b in self.boxes
        ]


# ---------------------------------------------------------------------------
# Primitive distances (broadcast over leading dimensions)
# ---------------------------------------------------------------------------

def segment_segment_distance(p1, q1, p2, q2) -> np.ndarray:
    """Exact minimum distance between segments [p1,q1] and [p2,q2]."""
    p1, q1, p2, q2 = (np.asarray(x, dtype=float) for x in (p1, q1, p2, q2))
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = (d1 * d1).sum(-1)
    e = (d2 * d2).sum(-1)
    b = (d1 * d2).sum(-1)
    c = (d1 * r).sum(-1)
    f = (d2 * r).sum(-1)
    denom = a * e - b * b
    s = np.where(denom > _TINY, (b * f - c * e) / np.where(denom > _TINY, denom, 1.0), 0.0)
    s = np.clip(s, 0.0, 1.0)
    t = np.where(e > _TINY, (b * s + f) / np.where(e > _TINY, e, 1.0), 0.0)
    # Re-clamp s where t left [0, 1] (or segment 2 is degenerate).
    t_clamped = np.clip(t, 0.0, 1.0)
    need = (t != t_clamped) | (e <= _TINY)
    s_alt = np.clip((t_clamped * b - c) / np.where(a > _TINY, a, 1.0), 0.0, 1.0)
    s = np.where(need & (a > _TINY), s_alt, s)
    s = np.where(a > _TINY, s, 0.0)
    t = t_clamped
    cp1 = p1 + s[..., None] * d1
    cp2 = p2 + t[..., None] * d2
    return np.linalg.norm(cp1 - cp2, axis=-1)


def segment_aabb_distance(p0, p1, half) -> np.ndarray:
    """Exact minimum distance from segment [p0,p1] to an origin-centered AABB.

    Zero when the segment touches or enters the box.  The squared distance is
    a convex piecewise quadratic in the segment parameter; the minimum is
    found by evaluating interval boundaries and per-interval vertices.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    half = np.asarray(half, dtype=float)
    a = p0
    b = p1 - p0
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = (half - a) / b
        t_lo = (-half - a) / b
    breaks = np.concatenate([t_hi, t_lo], axis=-1)
    breaks = np.where(np.isfinite(breaks), breaks, 0.0)
    breaks = np.clip(breaks, 0.0, 1.0)
    shape = breaks.shape[:-1]
    bounds = np.concatenate(
        [np.zeros(shape + (1,)), np.ones(shape + (1,)), breaks], axis=-1
    )
    bounds = np.sort(bounds, axis=-1)  # (..., 8)
    mids = 0.5 * (bounds[..., :-1] + bounds[..., 1:])  # (..., 7)
    pm = a[..., None, :] + b[..., None, :] * mids[..., None]
    out_pos = pm > half
    out_neg = pm < -half
    alpha = np.where(out_pos, a[..., None, :] - half, 0.0)
    alpha = np.where(out_neg, -a[..., None, :] - half, alpha)
    beta = np.where(out_pos, b[..., None, :], 0.0)
    beta = np.where(out_neg, -b[..., None, :], beta)
    qa = (beta * beta).sum(-1)
    qb = 2.0 * (alpha * beta).sum(-1)
    vertex = np.where(qa > _TINY, -qb / (2.0 * np.where(qa > _TINY, qa, 1.0)), mids)
    vertex = np.clip(vertex, bounds[..., :-1], bounds[..., 1:])
    cand = np.concatenate([bounds, vertex], axis=-1)  # (..., 15)
    pc = a[..., None, :] + b[..., None, :] * cand[..., None]
    excess = np.maximum(np.abs(pc) - half, 0.0)
    d2 = (excess * excess).sum(-1)
    return np.sqrt(d2.min(axis=-1))


def capsule_capsule_distance(c1: Capsule, c2: Capsule) -> float:
    """Signed surface distance; negative means penetration."""
    d = segment_segment_distance(c1.p0, c1.p1, c2.p0, c2.p1)
    return float(d) - c1.radius - c2.radius


def capsule_box_distance(cap: Capsule, box: Box) -> float:
    """Signed surface distance via segment-AABB distance in the box frame."""
    cy, sy = math.cos(box.yaw), math.sin(box.yaw)
    p0, p1 = _to_box_frame(cap.p0, cap.p1, box.center, box.half_extents, cy, sy)
    return float(segment_aabb_distance(p0, p1, box.half_extents)) - cap.radius


def capsule_plane_distance(cap: Capsule, plane: Plane) -> float:
    d0 = float(np.dot(cap.p0, plane.normal))
    d1 = float(np.dot(cap.p1, plane.normal))
    return min(d0, d1) - plane.offset - cap.radius


def _to_box_frame(e0, e1, center, half, cy, sy):
    """Rotate world segment endpoints into a yawed box's local frame."""
    r0 = e0 - center
    r1 = e1 - center
    out0 = np.empty_like(r0)
    out1 = np.empty_like(r1)
    out0[..., 0] = cy * r0[..., 0] + sy * r0[..., 1]
    out0[..., 1] = -sy * r0[..., 0] + cy * r0[..., 1]
    out0[..., 2] = r0[..., 2]
    out1[..., 0] = cy * r1[..., 0] + sy * r1[..., 1]
    out1[..., 1] = -sy * r1[..., 0] + cy * r1[..., 1]
    out1[..., 2] = r1[..., 2]
    return out0, out1


# ---------------------------------------------------------------------------
# Scene collision predicate
# ---------------------------------------------------------------------------

def _point_segment_sq(p, a, b):
    """Squared distance from point p (3,) to segments a->b (..., 3)."""
    ab = b - a
    ap = p - a
    denom = (ab * ab).sum(-1)
    t = np.clip((ap * ab).sum(-1) / np.where(denom > _TINY, denom, 1.0), 0.0, 1.0)
    t = np.where(denom > _TINY, t, 0.0)
    closest = a + t[..., None] * ab
    d = p - closest
    return (d * d).sum(-1)


def collision_mask(scene: Scene, configs: np.ndarray, margin: float = 0.0) -> np.ndarray:
    """(N,) boolean collision flags for configurations stacked as (N, 7).

    Configurations are in radians.  A configuration collides when any
    world-checked arm capsule is within margin of an obstacle, or any
    allowlisted self-collision capsule pair is within margin.
    """
    configs = np.atleast_2d(np.asarray(configs, dtype=float))
    n = configs.shape[0]
    e0, e1, radii, world = world_capsules_batch(configs, scene.arm)
    hit = np.zeros(n, dtype=bool)

    normals, offsets = scene._plane_arrays
    if normals.shape[0]:
        d0 = np.einsum("nli,ki->nlk", e0, normals)
        d1 = np.einsum("nli,ki->nlk", e1, normals)
        dist = np.minimum(d0, d1) - offsets[None, None, :] - radii[None, :, None]
        hit |= (dist[:, world, :] <= margin).any(axis=(1, 2))

    if scene._box_frames:
        w0 = e0[:, world]
        w1 = e1[:, world]
        thr = margin + radii[world]  # (L,) collide iff axis-box distance <= thr
        thr_ok = thr >= 0.0
        for center, half, cy, sy, circum in scene._box_frames:
            # bounding prefilter: axis-box distance >= |center - axis| - circum
            reach = thr + circum
            near = _point_segment_sq(center, w0, w1) <= np.where(reach > 0, reach * reach, -1.0)
            near &= thr_ok
            if not near.any():
                continue
            ni, nl = np.nonzero(near)
            b0, b1 = _to_box_frame(w0[ni, nl], w1[ni, nl], center, half, cy, sy)
            dist = segment_aabb_distance(b0, b1, half)
            hit_idx = ni[dist <= thr[nl]]
            hit[hit_idx] = True

    pairs = scene.arm.self_pair_indices
    if pairs.shape[0]:
        ia = pairs[:, 0]
        ib = pairs[:, 1]
        dist = segment_segment_distance(e0[:, ia], e1[:, ia], e0[:, ib], e1[:, ib])
        dist = dist - (radii[ia] + radii[ib])[None, :]
        hit |= (dist <= margin).any(axis=1)

    return hit


def is_collision(scene: Scene, c: np.ndarray, margin: float = 0.0) -> bool:
    """Collision predicate over a single configuration in radians."""
    return bool(collision_mask(scene, np.asarray(c, dtype=float)[None, :], margin)[0])


def interpolate_normalized(s1: np.ndarray, s2: np.ndarray, step: float) -> np.ndarray:
    """Waypoints from s1 to s2 inclusive, spaced at most step apart (L2)."""
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    dist = float(np.linalg.norm(s2 - s1))
    n = max(1, math.ceil(dist / step)) if dist > 0.0 else 0
    ts = np.linspace(0.0, 1.0, n + 1)
    return s1[None, :] + ts[:, None] * (s2 - s1)[None, :]


def edge_collision_free(
    scene: Scene,
    s1: np.ndarray,
    s2: np.ndarray,
    step: float = DEFAULT_EDGE_STEP,
    margin: float = 0.0,
) -> bool:
    """True iff every interpolated point on the normalized edge is free."""
    if step <= 0.0:
        raise ValueError("step must be positive")
    points = interpolate_normalized(s1, s2, step)
    configs = denormalize_batch(points, scene.arm.limits)
    return not collision_mask(scene, configs, margin).any()
