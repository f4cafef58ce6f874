"""Quaternion math in (w, x, y, z) order.

Array helpers operate on plain ``np.ndarray`` of shape (4,); `UnitQuaternion`
wraps one normalized value for the typed domain objects.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

UNIT_TOL = 1e-6


class QuaternionError(ValueError):
    pass


def qmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def qconj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def qnormalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = math.sqrt(float(q @ q))
    if n < 1e-12 or not math.isfinite(n):
        return np.array([1.0, 0.0, 0.0, 0.0])
    return q / n


def qrotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector ``v`` by unit quaternion ``q``."""
    return qmatrix(q) @ np.asarray(v, dtype=float)


def qmatrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def qfrom_matrix(m: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns the representative with w >= 0."""
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s,
                      (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                      0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    if q[0] < 0:
        q = -q
    return qnormalize(q)


def qfrom_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n < 1e-15:
        return np.array([1.0, 0.0, 0.0, 0.0])
    h = 0.5 * angle
    return np.concatenate([[math.cos(h)], axis / n * math.sin(h)])


def qfrom_rotvec(rv) -> np.ndarray:
    rv = np.asarray(rv, dtype=float)
    angle = float(np.linalg.norm(rv))
    if angle < 1e-15:
        return np.array([1.0, 0.5 * rv[0], 0.5 * rv[1], 0.5 * rv[2]]) / math.sqrt(
            1.0 + 0.25 * angle * angle)
    return qfrom_axis_angle(rv / angle, angle)


def qlog(q: np.ndarray) -> np.ndarray:
    """Rotation vector (axis * angle) of ``q``, with angle in [0, pi]."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0:
        q = -q
    v = q[1:]
    s = math.sqrt(float(v @ v))
    if s < 1e-15:
        return 2.0 * v
    angle = 2.0 * math.atan2(s, q[0])
    return v / s * angle


def qangle(q: np.ndarray) -> np.ndarray:
    """Rotation angle of ``q`` in [0, pi]; robust near zero and pi."""
    s = math.sqrt(q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    return 2.0 * math.atan2(s, abs(q[0]))


def qyaw(q: np.ndarray) -> float:
    """Heading angle about +z of the rotated x axis."""
    w, x, y, z = q
    return math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))


def qheading(q: np.ndarray) -> np.ndarray:
    return qfrom_axis_angle((0.0, 0.0, 1.0), qyaw(q))


def qslerp(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    d = float(a @ b)
    if d < 0:
        b, d = -b, -d
    if d > 0.9995:
        return qnormalize(a + t * (b - a))
    th = math.acos(min(d, 1.0))
    return (math.sin((1 - t) * th) * a + math.sin(t * th) * b) / math.sin(th)


@dataclass(frozen=True, eq=False)
class UnitQuaternion:
    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        n = math.sqrt(self.w ** 2 + self.x ** 2 + self.y ** 2 + self.z ** 2)
        if not math.isfinite(n) or abs(n - 1.0) > UNIT_TOL:
            raise QuaternionError(f"quaternion norm {n!r} is not unit")
        if abs(n - 1.0) > 1e-12:
            object.__setattr__(self, "w", self.w / n)
            object.__setattr__(self, "x", self.x / n)
            object.__setattr__(self, "y", self.y / n)
            object.__setattr__(self, "z", self.z / n)

    @classmethod
    def from_array(cls, a, normalize: bool = False) -> "UnitQuaternion":
        a = np.asarray(a, dtype=float)
        if normalize:
            a = qnormalize(a)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls()

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "UnitQuaternion":
        return cls.from_array(qfrom_axis_angle(axis, angle), normalize=True)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def __mul__(self, other: "UnitQuaternion") -> "UnitQuaternion":
        return UnitQuaternion.from_array(qmul(self.as_array(), other.as_array()),
                                         normalize=True)

    def inverse(self) -> "UnitQuaternion":
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    def rotate(self, v) -> np.ndarray:
        return qrotate(self.as_array(), v)

    def matrix(self) -> np.ndarray:
        return qmatrix(self.as_array())

    def __eq__(self, other):
        if not isinstance(other, UnitQuaternion):
            return NotImplemented
        return (self.w, self.x, self.y, self.z) == (other.w, other.x, other.y, other.z)

    def __hash__(self):
        return hash((self.w, self.x, self.y, self.z))

    def __repr__(self):
        return f"UnitQuaternion({self.w!r}, {self.x!r}, {self.y!r}, {self.z!r})"


def _check_unit(q: np.ndarray, name: str):
    n = math.sqrt(float(q @ q))
    if abs(n - 1.0) > UNIT_TOL:
        raise QuaternionError(f"{name} has norm {n!r}, expected unit")


def quat_diff_angle(a, b) -> float:
    """Geodesic angle between two orientations, in [0, pi].

    ``a`` and ``-a`` describe the same rotation and compare at distance zero.
    """
    qa = a.as_array() if isinstance(a, UnitQuaternion) else np.asarray(a, dtype=float)
    qb = b.as_array() if isinstance(b, UnitQuaternion) else np.asarray(b, dtype=float)
    _check_unit(qa, "a")
    _check_unit(qb, "b")
    return qangle(qmul(qconj(qa), qb))
