"""Vector/rotation math and the geometric primitives the critics build on.

Everything here is a pure function over immutable values; all lengths are in
meters and the global geometric tolerance is ``GEOM_EPS``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull as _QhullConvexHull
from scipy.spatial import QhullError

GEOM_EPS = 1e-9


@dataclass(frozen=True)
class Vec3:
    """3D point or direction."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise ValueError(f"non-finite Vec3 components: ({self.x}, {self.y}, {self.z})")

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def __mul__(self, s: float) -> "Vec3":
        return Vec3(self.x * s, self.y * s, self.z * s)

    __rmul__ = __mul__

    def __neg__(self) -> "Vec3":
        return Vec3(-self.x, -self.y, -self.z)

    def dot(self, other: "Vec3") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def cross(self, other: "Vec3") -> "Vec3":
        return Vec3(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )

    def norm(self) -> float:
        return math.sqrt(self.dot(self))

    def normalized(self) -> "Vec3":
        n = self.norm()
        if n < GEOM_EPS:
            raise ValueError("cannot normalize near-zero vector")
        return Vec3(self.x / n, self.y / n, self.z / n)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @staticmethod
    def from_array(a) -> "Vec3":
        return Vec3(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class Quat:
    """Unit quaternion, (x, y, z, w) component order."""

    x: float
    y: float
    z: float
    w: float

    @staticmethod
    def identity() -> "Quat":
        return Quat(0.0, 0.0, 0.0, 1.0)

    def norm(self) -> float:
        return math.sqrt(self.x**2 + self.y**2 + self.z**2 + self.w**2)

    def normalized(self) -> "Quat":
        n = self.norm()
        if n < GEOM_EPS:
            raise ValueError("cannot normalize near-zero quaternion")
        return Quat(self.x / n, self.y / n, self.z / n, self.w / n)

    def conjugate(self) -> "Quat":
        return Quat(-self.x, -self.y, -self.z, self.w)

    def __mul__(self, other: "Quat") -> "Quat":
        ax, ay, az, aw = self.x, self.y, self.z, self.w
        bx, by, bz, bw = other.x, other.y, other.z, other.w
        return Quat(
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        )

    def rotate(self, v: Vec3) -> Vec3:
        # q v q* expanded; avoids building two quaternion products
        qv = Vec3(self.x, self.y, self.z)
        uv = qv.cross(v)
        uuv = qv.cross(uv)
        return v + 2.0 * self.w * uv + 2.0 * uuv

    def to_matrix(self) -> np.ndarray:
        x, y, z, w = self.x, self.y, self.z, self.w
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
            ],
            dtype=float,
        )

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Quat":
        # Shepperd's method: pick the largest diagonal combination for stability
        t = np.trace(m)
        if t > 0:
            s = math.sqrt(t + 1.0) * 2
            w = 0.25 * s
            x = (m[2, 1] - m[1, 2]) / s
            y = (m[0, 2] - m[2, 0]) / s
            z = (m[1, 0] - m[0, 1]) / s
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
            w = (m[2, 1] - m[1, 2]) / s
            x = 0.25 * s
            y = (m[0, 1] + m[1, 0]) / s
            z = (m[0, 2] + m[2, 0]) / s
        elif m[1, 1] > m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
            w = (m[0, 2] - m[2, 0]) / s
            x = (m[0, 1] + m[1, 0]) / s
            y = 0.25 * s
            z = (m[1, 2] + m[2, 1]) / s
        else:
            s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
            w = (m[1, 0] - m[0, 1]) / s
            x = (m[0, 2] + m[2, 0]) / s
            y = (m[1, 2] + m[2, 1]) / s
            z = 0.25 * s
        return Quat(x, y, z, w).normalized()

    @staticmethod
    def from_axis_angle(axis: Vec3, angle: float) -> "Quat":
        a = axis.normalized()
        h = angle / 2.0
        s = math.sin(h)
        return Quat(a.x * s, a.y * s, a.z * s, math.cos(h))

    @staticmethod
    def from_rpy(roll: float, pitch: float, yaw: float) -> "Quat":
        # extrinsic x-y-z, i.e. R = Rz(yaw) Ry(pitch) Rx(roll)
        qx = Quat.from_axis_angle(Vec3(1, 0, 0), roll)
        qy = Quat.from_axis_angle(Vec3(0, 1, 0), pitch)
        qz = Quat.from_axis_angle(Vec3(0, 0, 1), yaw)
        return (qz * qy * qx).normalized()


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotate by ``orientation`` then translate by ``position``."""

    position: Vec3
    orientation: Quat

    @staticmethod
    def identity() -> "Pose":
        return Pose(Vec3(0, 0, 0), Quat.identity())

    def transform_point(self, p: Vec3) -> Vec3:
        return self.orientation.rotate(p) + self.position

    def transform_dir(self, d: Vec3) -> Vec3:
        return self.orientation.rotate(d)

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply ``other`` first, then ``self``."""
        return Pose(self.transform_point(other.position), (self.orientation * other.orientation).normalized())

    def inverse(self) -> "Pose":
        inv_q = self.orientation.conjugate()
        return Pose(inv_q.rotate(-self.position), inv_q)


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned box, lo.k <= hi.k on every axis."""

    lo: Vec3
    hi: Vec3

    def __post_init__(self):
        if self.lo.x > self.hi.x or self.lo.y > self.hi.y or self.lo.z > self.hi.z:
            raise ValueError(f"inverted Aabb: {self.lo} > {self.hi}")

    def center(self) -> Vec3:
        return Vec3((self.lo.x + self.hi.x) / 2, (self.lo.y + self.hi.y) / 2, (self.lo.z + self.hi.z) / 2)

    def contains(self, p: Vec3, tol: float = 0.0) -> bool:
        return (
            self.lo.x - tol <= p.x <= self.hi.x + tol
            and self.lo.y - tol <= p.y <= self.hi.y + tol
            and self.lo.z - tol <= p.z <= self.hi.z + tol
        )

    def corners(self) -> list[Vec3]:
        lo, hi = self.lo, self.hi
        return [
            Vec3(lo.x, lo.y, lo.z), Vec3(hi.x, lo.y, lo.z),
            Vec3(hi.x, hi.y, lo.z), Vec3(lo.x, hi.y, lo.z),
            Vec3(lo.x, lo.y, hi.z), Vec3(hi.x, lo.y, hi.z),
            Vec3(hi.x, hi.y, hi.z), Vec3(lo.x, hi.y, hi.z),
        ]

    def volume(self) -> float:
        return (self.hi.x - self.lo.x) * (self.hi.y - self.lo.y) * (self.hi.z - self.lo.z)


def aabb_of_points(points: list[Vec3]) -> Aabb:
    if not points:
        raise ValueError("aabb_of_points needs at least one point")
    xs = [p.x for p in points]
    ys = [p.y for p in points]
    zs = [p.z for p in points]
    return Aabb(Vec3(min(xs), min(ys), min(zs)), Vec3(max(xs), max(ys), max(zs)))


def aabb_distance(a: Aabb, b: Aabb) -> float:
    """Signed distance between two boxes.

    Positive: Euclidean separation of disjoint boxes. Non-positive: the
    negated smallest per-axis overlap, so penetration is simply a value < 0.
    """
    gaps = []
    overlaps = []
    for lo_a, hi_a, lo_b, hi_b in (
        (a.lo.x, a.hi.x, b.lo.x, b.hi.x),
        (a.lo.y, a.hi.y, b.lo.y, b.hi.y),
        (a.lo.z, a.hi.z, b.lo.z, b.hi.z),
    ):
        gap = max(lo_a - hi_b, lo_b - hi_a)
        if gap > 0:
            gaps.append(gap)
        else:
            overlaps.append(-gap)
    if gaps:
        return math.sqrt(sum(g * g for g in gaps))
    return -min(overlaps)


def point_aabb_distance(p: Vec3, box: Aabb) -> float:
    """Distance from a point to the box surface; 0 if the point is inside."""
    dx = max(box.lo.x - p.x, 0.0, p.x - box.hi.x)
    dy = max(box.lo.y - p.y, 0.0, p.y - box.hi.y)
    dz = max(box.lo.z - p.z, 0.0, p.z - box.hi.z)
    return math.sqrt(dx * dx + dy * dy + dz * dz)


@dataclass(frozen=True)
class ConvexHullResult:
    """3D convex hull: vertices plus outward-oriented triangular facets.

    ``degenerate`` marks affinely dependent inputs (rank < 3); such hulls
    have no facets and zero volume. That is a signal, not a failure: short
    trajectories legitimately produce flat point sets.
    """

    vertices: tuple[Vec3, ...]
    facets: tuple[tuple[int, int, int], ...]
    degenerate: bool


def _affine_rank(pts: np.ndarray, tol: float = 1e-9) -> int:
    centered = pts - pts.mean(axis=0)
    if len(pts) < 2:
        return 0
    s = np.linalg.svd(centered, compute_uv=False)
    return int(np.sum(s > tol * max(1.0, s[0] if len(s) else 1.0)))


def convex_hull(points: list[Vec3]) -> ConvexHullResult:
    """Hull of >= 1 points; affinely dependent inputs yield a degenerate hull."""
    if not points:
        raise ValueError("convex_hull needs at least one point")
    pts = np.array([[p.x, p.y, p.z] for p in points], dtype=float)
    unique = np.unique(pts, axis=0)
    if len(unique) < 4 or _affine_rank(unique) < 3:
        verts = tuple(Vec3.from_array(row) for row in unique)
        return ConvexHullResult(vertices=verts, facets=(), degenerate=True)
    try:
        qh = _QhullConvexHull(pts)
    except QhullError:
        verts = tuple(Vec3.from_array(row) for row in unique)
        return ConvexHullResult(vertices=verts, facets=(), degenerate=True)

    # Reindex hull vertices compactly and orient each facet so the
    # right-hand normal agrees with qhull's outward plane normal.
    index_map = {old: new for new, old in enumerate(qh.vertices)}
    verts = tuple(Vec3.from_array(pts[i]) for i in qh.vertices)
    facets = []
    for simplex, eq in zip(qh.simplices, qh.equations):
        i, j, k = (index_map[s] for s in simplex)
        a, b, c = verts[i], verts[j], verts[k]
        n = (b - a).cross(c - a)
        if n.dot(Vec3(eq[0], eq[1], eq[2])) < 0:
            j, k = k, j
        facets.append((i, j, k))
    return ConvexHullResult(vertices=verts, facets=tuple(facets), degenerate=False)


def hull_volume(h: ConvexHullResult) -> float:
    """Volume by the signed tetrahedron sum over outward facets."""
    if h.degenerate or not h.facets:
        return 0.0
    total = 0.0
    for i, j, k in h.facets:
        a, b, c = h.vertices[i], h.vertices[j], h.vertices[k]
        total += a.dot(b.cross(c))
    return total / 6.0


def hull_max_signed_distance(h: ConvexHullResult, p: Vec3) -> float:
    """Max signed distance of ``p`` to the facet planes (<= 0 means inside)."""
    if h.degenerate or not h.facets:
        return math.inf
    worst = -math.inf
    for i, j, k in h.facets:
        a, b, c = h.vertices[i], h.vertices[j], h.vertices[k]
        n = (b - a).cross(c - a)
        nn = n.norm()
        if nn < GEOM_EPS:
            continue
        d = n.dot(p - a) / nn
        if d > worst:
            worst = d
    return worst


def segment_distance(a0: Vec3, a1: Vec3, b0: Vec3, b1: Vec3) -> float:
    """Minimum distance between segments a0-a1 and b0-b1 (points allowed)."""
    d1 = a1 - a0
    d2 = b1 - b0
    r = a0 - b0
    a = d1.dot(d1)
    e = d2.dot(d2)
    f = d2.dot(r)
    if a < GEOM_EPS and e < GEOM_EPS:
        return r.norm()
    if a < GEOM_EPS:
        s = 0.0
        t = min(max(f / e, 0.0), 1.0)
    else:
        c = d1.dot(r)
        if e < GEOM_EPS:
            t = 0.0
            s = min(max(-c / a, 0.0), 1.0)
        else:
            b = d1.dot(d2)
            denom = a * e - b * b
            if denom > GEOM_EPS * a * e:
                s = min(max((b * f - c * e) / denom, 0.0), 1.0)
            else:
                s = 0.0
            t = b * s + f
            if t < 0.0:
                t = 0.0
                s = min(max(-c / a, 0.0), 1.0)
            elif t > e:
                t = 1.0
                s = min(max((b - c) / a, 0.0), 1.0)
            else:
                t = t / e
    closest_a = a0 + d1 * s
    closest_b = b0 + d2 * t
    return (closest_a - closest_b).norm()


def capsule_aabb(a: Vec3, b: Vec3, radius: float) -> Aabb:
    """World AABB of the capsule spanned by segment a-b with ``radius``."""
    return Aabb(
        Vec3(min(a.x, b.x) - radius, min(a.y, b.y) - radius, min(a.z, b.z) - radius),
        Vec3(max(a.x, b.x) + radius, max(a.y, b.y) + radius, max(a.z, b.z) + radius),
    )
