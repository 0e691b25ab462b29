"""2.5D ray-cast geometry: extruded wall segments, floor/ceiling planes,
vertical player cylinders, and effect/bomb spheres.

All rays are cast in batches against a :class:`RayScene`, a flat numpy
snapshot of everything hittable. Distances are exact intersection
parameters along unit direction vectors, so axis-aligned scenes agree
with analytic plane formulas to float64 precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

MAX_RAY_DIST = 100.0
FLOOR_Z = 0.0
CEILING_Z = 3.0


class HitKind(IntEnum):
    MISS = 0
    OTHER = 1          # walls, floor, ceiling
    BOMBSITE = 2       # floor hit inside the bombsite rectangle
    PLAYER = 3
    SMOKE = 4
    FIRE = 5
    BOMB_DROPPED = 6
    BOMB_PLANTED = 7


@dataclass(frozen=True, slots=True)
class Vec3:
    x: float
    y: float
    z: float = 0.0

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def scaled(self, k: float) -> "Vec3":
        return Vec3(self.x * k, self.y * k, self.z * k)

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def norm_xy(self) -> float:
        return math.hypot(self.x, self.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


def direction_from_angles(yaw_deg: float, pitch_deg: float) -> np.ndarray:
    """Unit view vector for a yaw/pitch pair, as a float64 array.

    Yaw is clockwise-positive when seen from above (0 deg = +x, 90 deg = -y),
    so a positive yaw offset looks to the viewer's right. Pitch is
    positive-up.
    """
    yaw = math.radians(yaw_deg)
    pitch = math.radians(pitch_deg)
    cp = math.cos(pitch)
    return np.array(
        [cp * math.cos(yaw), -cp * math.sin(yaw), math.sin(pitch)],
        dtype=np.float64,
    )


def yaw_of_direction(dx: float, dy: float) -> float:
    """Inverse of the horizontal part of direction_from_angles, in degrees [0, 360)."""
    return math.degrees(math.atan2(-dy, dx)) % 360.0


def wrap_angle(deg: float) -> float:
    """Wrap to (-180, 180]."""
    wrapped = (deg + 180.0) % 360.0 - 180.0
    return 180.0 if wrapped == -180.0 else wrapped


@dataclass(frozen=True)
class Hit:
    kind: HitKind
    distance: float
    entity_id: int = -1

    @property
    def is_miss(self) -> bool:
        return self.kind == HitKind.MISS


@dataclass
class RayScene:
    """Flattened hittable geometry. Arrays may be empty but never None."""

    segments: np.ndarray          # (S, 4) x1, y1, x2, y2; extruded floor..ceiling
    bombsite: np.ndarray | None   # (4,) xmin, ymin, xmax, ymax, or None
    cylinders: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 5)))     # (P, 5) cx, cy, z0, z1, r
    cylinder_ids: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=np.int64))
    spheres: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 4)))     # (Q, 4) cx, cy, cz, r
    sphere_kinds: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=np.int64))
    sphere_ids: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=np.int64))
    floor_z: float = FLOOR_Z
    ceiling_z: float = CEILING_Z


def raycast_batch(
    scene: RayScene,
    origin: np.ndarray,
    dirs: np.ndarray,
    max_dist: float = MAX_RAY_DIST,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cast N unit rays from one origin; nearest hit wins.

    Returns (kinds, distances, entity_ids), each shape (N,). Misses carry
    kind MISS, distance max_dist, id -1.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    n = dirs.shape[0]
    ox, oy, oz = float(origin[0]), float(origin[1]), float(origin[2])
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]

    best_t = np.full(n, max_dist, dtype=np.float64)
    best_kind = np.full(n, int(HitKind.MISS), dtype=np.int64)
    best_id = np.full(n, -1, dtype=np.int64)

    def consider(t: np.ndarray, valid: np.ndarray, kind, ent) -> None:
        better = valid & (t < best_t)
        if not better.any():
            return
        best_t[better] = t[better]
        if np.isscalar(kind):
            best_kind[better] = kind
        else:
            best_kind[better] = kind[better]
        if np.isscalar(ent):
            best_id[better] = ent
        else:
            best_id[better] = ent[better]

    # Walls: 2D ray/segment intersection with the z-extent check.
    segs = scene.segments
    if segs.shape[0]:
        ax, ay = segs[:, 0], segs[:, 1]
        ex, ey = segs[:, 2] - ax, segs[:, 3] - ay
        denom = dx[:, None] * ey[None, :] - dy[:, None] * ex[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            rel_x = ax[None, :] - ox
            rel_y = ay[None, :] - oy
            t = (rel_x * ey[None, :] - rel_y * ex[None, :]) / denom
            u = (rel_x * dy[:, None] - rel_y * dx[:, None]) / denom
            z_at = oz + t * dz[:, None]
            ok = (
                (np.abs(denom) > 1e-15)
                & (t > 1e-12)
                & (u >= 0.0)
                & (u <= 1.0)
                & (z_at >= scene.floor_z)
                & (z_at <= scene.ceiling_z)
            )
        t = np.where(ok, t, np.inf)
        idx = np.argmin(t, axis=1)
        tmin = t[np.arange(n), idx]
        consider(tmin, np.isfinite(tmin), int(HitKind.OTHER), -1)

    # Floor and ceiling: infinite planes; floor hits inside the bombsite
    # rectangle report as BOMBSITE.
    with np.errstate(divide="ignore", invalid="ignore"):
        t_floor = (scene.floor_z - oz) / dz
        t_ceil = (scene.ceiling_z - oz) / dz
    fl_ok = (dz < 0) & (t_floor > 1e-12)
    if fl_ok.any():
        with np.errstate(invalid="ignore"):
            hx = ox + t_floor * dx
            hy = oy + t_floor * dy
        kinds = np.full(n, int(HitKind.OTHER), dtype=np.int64)
        if scene.bombsite is not None:
            bx0, by0, bx1, by1 = scene.bombsite
            in_site = (hx >= bx0) & (hx <= bx1) & (hy >= by0) & (hy <= by1)
            kinds[in_site] = int(HitKind.BOMBSITE)
        consider(t_floor, fl_ok, kinds, -1)
    ce_ok = (dz > 0) & (t_ceil > 1e-12)
    consider(t_ceil, ce_ok, int(HitKind.OTHER), -1)

    # Player cylinders: lateral surface plus end caps.
    cyl = scene.cylinders
    if cyl.shape[0]:
        cx, cy, z0, z1, r = (cyl[:, i] for i in range(5))
        fx = ox - cx[None, :]
        fy = oy - cy[None, :]
        a = (dx * dx + dy * dy)[:, None]
        b = 2.0 * (fx * dx[:, None] + fy * dy[:, None])
        c = fx * fx + fy * fy - (r * r)[None, :]
        disc = b * b - 4.0 * a * c
        with np.errstate(divide="ignore", invalid="ignore"):
            sq = np.sqrt(np.maximum(disc, 0.0))
            t1 = (-b - sq) / (2.0 * a)
            t2 = (-b + sq) / (2.0 * a)
        t_side = np.full_like(t1, np.inf)
        for tc in (t1, t2):
            zc = oz + tc * dz[:, None]
            ok = (
                (disc >= 0.0) & (a > 1e-15) & (tc > 1e-12)
                & (zc >= z0[None, :]) & (zc <= z1[None, :])
            )
            t_side = np.where(ok & (tc < t_side), tc, t_side)
        t_caps = np.full_like(t1, np.inf)
        for zcap in (z0, z1):
            with np.errstate(divide="ignore", invalid="ignore"):
                tc = (zcap[None, :] - oz) / dz[:, None]
                hx = ox + tc * dx[:, None] - cx[None, :]
                hy = oy + tc * dy[:, None] - cy[None, :]
                ok = ((tc > 1e-12) & np.isfinite(tc)
                      & (hx * hx + hy * hy <= (r * r)[None, :]))
            t_caps = np.where(ok & (tc < t_caps), tc, t_caps)
        t_cyl = np.minimum(t_side, t_caps)
        idx = np.argmin(t_cyl, axis=1)
        tmin = t_cyl[np.arange(n), idx]
        consider(tmin, np.isfinite(tmin), int(HitKind.PLAYER),
                 scene.cylinder_ids[idx])

    # Spheres (smoke, fire, bomb). Origin inside a sphere hits at 0.
    sph = scene.spheres
    if sph.shape[0]:
        fx = ox - sph[None, :, 0]
        fy = oy - sph[None, :, 1]
        fz = oz - sph[None, :, 2]
        r = sph[:, 3]
        b = 2.0 * (fx * dx[:, None] + fy * dy[:, None] + fz * dz[:, None])
        c = fx * fx + fy * fy + fz * fz - (r * r)[None, :]
        disc = b * b - 4.0 * c
        sq = np.sqrt(np.maximum(disc, 0.0))
        t1 = (-b - sq) / 2.0
        inside = c[0] <= 0.0  # origin-dependent only
        t_sph = np.where((disc >= 0.0) & (t1 > 1e-12), t1, np.inf)
        t_sph = np.where(inside[None, :], 0.0, t_sph)
        idx = np.argmin(t_sph, axis=1)
        tmin = t_sph[np.arange(n), idx]
        consider(tmin, np.isfinite(tmin),
                 scene.sphere_kinds[idx], scene.sphere_ids[idx])

    return best_kind, best_t, best_id


def raycast(
    scene: RayScene,
    origin: np.ndarray,
    direction: np.ndarray,
    max_dist: float = MAX_RAY_DIST,
) -> Hit:
    """Single-ray convenience wrapper; direction must be unit length."""
    kinds, dists, ids = raycast_batch(
        scene, np.asarray(origin, dtype=np.float64),
        np.asarray(direction, dtype=np.float64)[None, :], max_dist)
    return Hit(HitKind(int(kinds[0])), float(dists[0]), int(ids[0]))


def point_segment_distance(px: float, py: float, seg: tuple) -> float:
    x1, y1, x2, y2 = seg
    ex, ey = x2 - x1, y2 - y1
    length2 = ex * ex + ey * ey
    if length2 == 0.0:
        return math.hypot(px - x1, py - y1)
    t = max(0.0, min(1.0, ((px - x1) * ex + (py - y1) * ey) / length2))
    return math.hypot(px - (x1 + t * ex), py - (y1 + t * ey))


def segments_cross(a: tuple, b: tuple) -> bool:
    """True if 2D segments a and b properly intersect or touch."""
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b

    def orient(ox, oy, px, py, qx, qy):
        v = (px - ox) * (qy - oy) - (py - oy) * (qx - ox)
        return 0 if abs(v) < 1e-12 else (1 if v > 0 else -1)

    d1 = orient(ax1, ay1, ax2, ay2, bx1, by1)
    d2 = orient(ax1, ay1, ax2, ay2, bx2, by2)
    d3 = orient(bx1, by1, bx2, by2, ax1, ay1)
    d4 = orient(bx1, by1, bx2, by2, ax2, ay2)
    if d1 * d2 < 0 and d3 * d4 < 0:
        return True

    def on_seg(ox, oy, px, py, qx, qy):
        return (min(ox, px) - 1e-12 <= qx <= max(ox, px) + 1e-12
                and min(oy, py) - 1e-12 <= qy <= max(oy, py) + 1e-12)

    if d1 == 0 and on_seg(ax1, ay1, ax2, ay2, bx1, by1):
        return True
    if d2 == 0 and on_seg(ax1, ay1, ax2, ay2, bx2, by2):
        return True
    if d3 == 0 and on_seg(bx1, by1, bx2, by2, ax1, ay1):
        return True
    if d4 == 0 and on_seg(bx1, by1, bx2, by2, ax2, ay2):
        return True
    return False
