"""Labeled point-cloud observations from four cardinal viewpoints.

Each sensor casts a fixed low-discrepancy bundle of rays toward the
workspace and records the first surface hit per ray, labeled as robot,
static scenery (table/floor and fixed obstacles), or varying obstacles.
Everything is deterministic: same scene, configuration, and rig give a
bit-identical cloud.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .arm import world_capsules_batch
from .geometry import STATIC, Scene
from .tasks import ParseError

CLOUD_SCHEMA_VERSION = 1

LABEL_ROBOT = 0
LABEL_STATIC = 1
LABEL_VARYING = 2
LABEL_NAMES = ("robot", "static", "varying")

_EPS = 1e-9


@dataclass(frozen=True)
class SensorRig:
    """Four sensors in cardinal directions looking at the robot."""

    origins: np.ndarray = field(
        default_factory=lambda: np.array(
            [
                [1.5, 0.0, 0.8],
                [0.0, 1.5, 0.8],
                [-1.5, 0.0, 0.8],
                [0.0, -1.5, 0.8],
            ]
        )
    )
    rays_per_sensor: int = 10_000
    max_range: float = 4.0
    target: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.45]))
    cone_half_angle: float = 0.7  # radians

    def __post_init__(self):
        object.__setattr__(self, "origins", np.atleast_2d(np.asarray(self.origins, dtype=float)))
        object.__setattr__(self, "target", np.asarray(self.target, dtype=float))
        if self.rays_per_sensor < 1:
            raise ValueError("rays_per_sensor must be >= 1")


def default_rig(rays_per_sensor: int = 10_000) -> SensorRig:
    return SensorRig(rays_per_sensor=rays_per_sensor)


@dataclass
class LabeledPointCloud:
    points: np.ndarray  # (N, 3)
    labels: np.ndarray  # (N,) ints from LABEL_*
    sensors: np.ndarray  # (N,) sensor index per point

    def __len__(self):
        return self.points.shape[0]


# ---------------------------------------------------------------------------
# Ray generation
# ---------------------------------------------------------------------------

def _halton(count: int, base: int) -> np.ndarray:
    idx = np.arange(1, count + 1)
    out = np.zeros(count)
    f = 1.0
    while idx.any():
        f /= base
        out += f * (idx % base)
        idx //= base
    return out


@lru_cache(maxsize=32)
def _cone_pattern(count: int, cos_half_angle: float) -> np.ndarray:
    """Low-discrepancy (cos-theta, phi) pairs covering a cone solid angle."""
    h2 = _halton(count, 2)
    h3 = _halton(count, 3)
    cos_t = 1.0 - h2 * (1.0 - cos_half_angle)
    phi = 2.0 * np.pi * h3
    return np.stack([cos_t, phi], axis=1)


def ray_directions(rig: SensorRig, sensor_index: int) -> np.ndarray:
    """Unit ray directions for one sensor, aimed at the rig target."""
    origin = rig.origins[sensor_index]
    w = rig.target - origin
    w = w / np.linalg.norm(w)
    helper = np.array([0.0, 0.0, 1.0])
    if abs(w @ helper) > 0.99:
        helper = np.array([1.0, 0.0, 0.0])
    u = np.cross(helper, w)
    u /= np.linalg.norm(u)
    v = np.cross(w, u)
    pattern = _cone_pattern(rig.rays_per_sensor, float(np.cos(rig.cone_half_angle)))
    cos_t = pattern[:, 0]
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    phi = pattern[:, 1]
    return (
        sin_t[:, None] * np.cos(phi)[:, None] * u
        + sin_t[:, None] * np.sin(phi)[:, None] * v
        + cos_t[:, None] * w
    )


# ---------------------------------------------------------------------------
# Ray-primitive intersections (vectorized over rays)
# ---------------------------------------------------------------------------

def _ray_plane(origin, dirs, normal, offset):
    denom = dirs @ normal
    height = origin @ normal - offset
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -height / denom
    t = np.where((np.abs(denom) > _EPS) & (t > _EPS), t, np.inf)
    return t


def _ray_box(origin, dirs, center, half, cy, sy):
    rel = origin - center
    o = np.array([cy * rel[0] + sy * rel[1], -sy * rel[0] + cy * rel[1], rel[2]])
    d = np.empty_like(dirs)
    d[:, 0] = cy * dirs[:, 0] + sy * dirs[:, 1]
    d[:, 1] = -sy * dirs[:, 0] + cy * dirs[:, 1]
    d[:, 2] = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
    lo = (-half - o) * inv
    hi = (half - o) * inv
    # rays parallel to an axis: valid only if origin within that slab
    parallel = np.abs(d) <= _EPS
    inside = np.abs(o) <= half
    lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
    hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)
    tmin = np.minimum(lo, hi).max(axis=1)
    tmax = np.maximum(lo, hi).min(axis=1)
    hit = (tmax >= tmin) & (tmax > _EPS) & (tmin > _EPS)
    return np.where(hit, tmin, np.inf)


def _ray_capsule(origin, dirs, a, b, radius):
    ab = b - a
    length = float(np.linalg.norm(ab))
    t_best = np.full(dirs.shape[0], np.inf)
    oa = origin - a
    if length > _EPS:
        u = ab / length
        d_perp = dirs - np.outer(dirs @ u, u)
        o_perp = oa - (oa @ u) * u
        qa = (d_perp * d_perp).sum(1)
        qb = 2.0 * (d_perp @ o_perp)
        qc = o_perp @ o_perp - radius * radius
        disc = qb * qb - 4.0 * qa * qc
        ok = (disc >= 0.0) & (qa > _EPS)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t = np.where(ok, (-qb - sq) / np.where(qa > _EPS, 2.0 * qa, 1.0), np.inf)
        axial = oa @ u + t * (dirs @ u)
        valid = ok & (t > _EPS) & (axial >= 0.0) & (axial <= length)
        t_best = np.where(valid & (t < t_best), t, t_best)
    for cap_center in (a, b):
        oc = origin - cap_center
        qb = 2.0 * (dirs @ oc)
        qc = oc @ oc - radius * radius
        disc = qb * qb - 4.0 * qc  # qa == 1 for unit dirs
        ok = disc >= 0.0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t = np.where(ok, (-qb - sq) / 2.0, np.inf)
        valid = ok & (t > _EPS)
        t_best = np.where(valid & (t < t_best), t, t_best)
    return t_best


# ---------------------------------------------------------------------------
# Sensing
# ---------------------------------------------------------------------------

def sense(scene: Scene, c: np.ndarray | None, rig: SensorRig | None = None) -> LabeledPointCloud:
    """Cast each sensor's ray bundle and label first hits.

    ``c`` is the arm configuration in radians; pass None to sense the bare
    scene (no robot points).  Points come back grouped by (sensor, ray)
    order, misses dropped.
    """
    rig = rig or default_rig()
    capsules = None
    if c is not None:
        e0, e1, radii, _ = world_capsules_batch(np.asarray(c, dtype=float)[None], scene.arm)
        capsules = list(zip(e0[0], e1[0], radii))
    all_points, all_labels, all_sensors = [], [], []
    for k in range(rig.origins.shape[0]):
        origin = rig.origins[k]
        dirs = ray_directions(rig, k)
        best_t = np.full(dirs.shape[0], np.inf)
        best_label = np.full(dirs.shape[0], -1, dtype=np.int8)
        if capsules is not None:
            for a, b, r in capsules:
                t = _ray_capsule(origin, dirs, a, b, r)
                closer = t < best_t
                best_t = np.where(closer, t, best_t)
                best_label = np.where(closer, LABEL_ROBOT, best_label)
        for plane in scene.planes:
            t = _ray_plane(origin, dirs, plane.normal, plane.offset)
            closer = t < best_t
            best_t = np.where(closer, t, best_t)
            lab = LABEL_STATIC if plane.label == STATIC else LABEL_VARYING
            best_label = np.where(closer, lab, best_label)
        for box, frame in zip(scene.boxes, scene._box_frames):
            center, half, cy, sy, _ = frame
            t = _ray_box(origin, dirs, center, half, cy, sy)
            closer = t < best_t
            best_t = np.where(closer, t, best_t)
            lab = LABEL_STATIC if box.label == STATIC else LABEL_VARYING
            best_label = np.where(closer, lab, best_label)
        hit = np.isfinite(best_t) & (best_t <= rig.max_range)
        pts = origin + best_t[hit, None] * dirs[hit]
        all_points.append(pts)
        all_labels.append(best_label[hit])
        all_sensors.append(np.full(int(hit.sum()), k, dtype=np.int8))
    return LabeledPointCloud(
        points=np.vstack(all_points) if all_points else np.zeros((0, 3)),
        labels=np.concatenate(all_labels) if all_labels else np.zeros(0, np.int8),
        sensors=np.concatenate(all_sensors) if all_sensors else np.zeros(0, np.int8),
    )


# ---------------------------------------------------------------------------
# Dump format: one point per record
# ---------------------------------------------------------------------------

def save_cloud(path, cloud: LabeledPointCloud) -> None:
    lines = [
        "# armplan labeled point cloud",
        f"schema_version {CLOUD_SCHEMA_VERSION}",
        f"count {len(cloud)}",
    ]
    for p, lab, s in zip(cloud.points, cloud.labels, cloud.sensors):
        lines.append(
            f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r} {LABEL_NAMES[lab]} {s}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_cloud(path) -> LabeledPointCloud:
    points, labels, sensors = [], [], []
    count = None
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        if tok[0] == "schema_version":
            if int(tok[1]) != CLOUD_SCHEMA_VERSION:
                raise ParseError(path, line_no, f"unsupported schema_version {tok[1]}")
        elif tok[0] == "count":
            count = int(tok[1])
        else:
            if len(tok) != 5:
                raise ParseError(path, line_no, "point record needs x y z label sensor")
            points.append([float(tok[0]), float(tok[1]), float(tok[2])])
            if tok[3] not in LABEL_NAMES:
                raise ParseError(path, line_no, f"unknown label {tok[3]!r}")
            labels.append(LABEL_NAMES.index(tok[3]))
            sensors.append(int(tok[4]))
    cloud = LabeledPointCloud(
        points=np.array(points).reshape(-1, 3),
        labels=np.array(labels, dtype=np.int8),
        sensors=np.array(sensors, dtype=np.int8),
    )
    if count is not None and count != len(cloud):
        raise ParseError(path, 0, f"count {count} != {len(cloud)} points")
    return cloud
