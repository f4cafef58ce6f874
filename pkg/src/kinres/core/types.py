"""Immutable value types for poses, motion clips, and rigid transforms."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from kinres.core.quat import (UnitQuaternion, qconj, qlog, qmatrix, qmul,
                              qnormalize, qrotate)


def frozen_array(a, n: Optional[int] = None, name: str = "array") -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True).reshape(-1)
    if n is not None and arr.shape[0] != n:
        raise ValueError(f"{name} must have length {n}, got {arr.shape[0]}")
    arr.flags.writeable = False
    return arr


class ActionLabel(str, enum.Enum):
    SIT = "sit"
    PUSH = "push"
    AVOID = "avoid"
    OTHER = "other"


@dataclass(frozen=True)
class Transform:
    rotation: UnitQuaternion = field(default_factory=UnitQuaternion)
    translation: np.ndarray = field(default_factory=lambda: frozen_array(np.zeros(3)))

    def __post_init__(self):
        object.__setattr__(self, "translation", frozen_array(self.translation, 3, "translation"))

    @classmethod
    def identity(cls) -> "Transform":
        return cls()

    @classmethod
    def from_translation(cls, *xyz) -> "Transform":
        return cls(UnitQuaternion(), np.asarray(xyz, dtype=float).reshape(3))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.matrix()
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Transform":
        rinv = self.rotation.inverse()
        return Transform(rinv, -rinv.rotate(self.translation))

    def apply(self, p) -> np.ndarray:
        return self.rotation.rotate(p) + self.translation

    def __eq__(self, other):
        if not isinstance(other, Transform):
            return NotImplemented
        return self.rotation == other.rotation and np.array_equal(self.translation, other.translation)

    __hash__ = None


def transform_compose(a: Transform, b: Transform) -> Transform:
    """``a * b``: apply ``b`` first, then ``a`` (homogeneous product A @ B)."""
    rot = UnitQuaternion.from_array(qmul(a.rotation.as_array(), b.rotation.as_array()),
                                    normalize=True)
    return Transform(rot, a.rotation.rotate(b.translation) + a.translation)


@dataclass(frozen=True, eq=False)
class Pose:
    root_pos: np.ndarray
    root_rot: UnitQuaternion
    joint_angles: np.ndarray
    clamped: bool = False

    def __post_init__(self):
        object.__setattr__(self, "root_pos", frozen_array(self.root_pos, 3, "root_pos"))
        object.__setattr__(self, "joint_angles", frozen_array(self.joint_angles, name="joint_angles"))

    @property
    def dof(self) -> int:
        return self.joint_angles.shape[0]

    def root_transform(self) -> Transform:
        return Transform(self.root_rot, self.root_pos)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return (np.array_equal(self.root_pos, other.root_pos) and self.root_rot == other.root_rot
                and np.array_equal(self.joint_angles, other.joint_angles))


@dataclass(frozen=True, eq=False)
class Velocity:
    root_lin: np.ndarray
    root_ang: np.ndarray
    joint_vel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "root_lin", frozen_array(self.root_lin, 3, "root_lin"))
        object.__setattr__(self, "root_ang", frozen_array(self.root_ang, 3, "root_ang"))
        object.__setattr__(self, "joint_vel", frozen_array(self.joint_vel, name="joint_vel"))

    @classmethod
    def zeros(cls, dof: int) -> "Velocity":
        return cls(np.zeros(3), np.zeros(3), np.zeros(dof))

    def __eq__(self, other):
        if not isinstance(other, Velocity):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("root_lin", "root_ang", "joint_vel"))


@dataclass(frozen=True, eq=False)
class ObjectState:
    object_id: str
    pose: Transform
    lin_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ang_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "lin_vel", frozen_array(self.lin_vel, 3, "lin_vel"))
        object.__setattr__(self, "ang_vel", frozen_array(self.ang_vel, 3, "ang_vel"))

    def __eq__(self, other):
        if not isinstance(other, ObjectState):
            return NotImplemented
        return (self.object_id == other.object_id and self.pose == other.pose
                and np.array_equal(self.lin_vel, other.lin_vel)
                and np.array_equal(self.ang_vel, other.ang_vel))


@dataclass(frozen=True, eq=False)
class HeadSample:
    h_pos: np.ndarray
    h_rot: UnitQuaternion
    h_lin_vel_world: np.ndarray
    h_lin_vel_local: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "h_pos", frozen_array(self.h_pos, 3, "h_pos"))
        object.__setattr__(self, "h_lin_vel_world",
                           frozen_array(self.h_lin_vel_world, 3, "h_lin_vel_world"))
        if self.h_lin_vel_local is None:
            local = self.h_rot.inverse().rotate(self.h_lin_vel_world)
        else:
            local = self.h_lin_vel_local
        object.__setattr__(self, "h_lin_vel_local", frozen_array(local, 3, "h_lin_vel_local"))

    def __eq__(self, other):
        if not isinstance(other, HeadSample):
            return NotImplemented
        return (self.h_rot == other.h_rot
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("h_pos", "h_lin_vel_world", "h_lin_vel_local")))


@dataclass(frozen=True, eq=False)
class Frame:
    pose: Pose
    velocity: Optional[Velocity] = None
    objects: tuple = ()
    head: Optional[HeadSample] = None

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (self.pose == other.pose and self.velocity == other.velocity
                and self.objects == other.objects and self.head == other.head)


class ClipError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MotionClip:
    frame_rate: float
    frames: tuple
    action_label: ActionLabel = ActionLabel.OTHER
    joint_names: tuple = ()
    object_ids: tuple = ()
    name: str = ""

    def __post_init__(self):
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "action_label", ActionLabel(self.action_label))
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "object_ids", tuple(self.object_ids))
        if len(frames) < 2:
            raise ClipError(f"a motion clip needs at least 2 frames, got {len(frames)}")
        if not self.frame_rate > 0:
            raise ClipError(f"frame_rate must be positive, got {self.frame_rate}")
        dof = frames[0].pose.dof
        if self.joint_names and len(self.joint_names) != dof:
            raise ClipError(f"{len(self.joint_names)} joint names for {dof} DoF")
        for i, fr in enumerate(frames):
            if fr.pose.dof != dof:
                raise ClipError(f"frame {i}: expected {dof} joint angles, got {fr.pose.dof}")
            if fr.velocity is not None and fr.velocity.joint_vel.shape[0] != dof:
                raise ClipError(f"frame {i}: velocity DoF mismatch")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def dof(self) -> int:
        return self.frames[0].pose.dof

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate

    @property
    def has_velocities(self) -> bool:
        return all(f.velocity is not None for f in self.frames)

    @property
    def has_heads(self) -> bool:
        return all(f.head is not None for f in self.frames)

    def joint_angles(self) -> np.ndarray:
        return np.stack([f.pose.joint_angles for f in self.frames])

    def root_positions(self) -> np.ndarray:
        return np.stack([f.pose.root_pos for f in self.frames])

    def root_rotations(self) -> np.ndarray:
        return np.stack([f.pose.root_rot.as_array() for f in self.frames])

    def joint_velocities(self) -> np.ndarray:
        return np.stack([f.velocity.joint_vel for f in self.frames])

    def head_positions(self) -> np.ndarray:
        return np.stack([f.head.h_pos for f in self.frames])

    def object_track(self, object_id: str) -> list:
        out = []
        for f in self.frames:
            for o in f.objects:
                if o.object_id == object_id:
                    out.append(o)
                    break
        return out

    def with_frames(self, frames: Sequence[Frame]) -> "MotionClip":
        return replace(self, frames=tuple(frames))

    def slice(self, start: int, stop: int) -> "MotionClip":
        return replace(self, frames=self.frames[start:stop])

    def __eq__(self, other):
        if not isinstance(other, MotionClip):
            return NotImplemented
        return (self.frame_rate == other.frame_rate and self.action_label == other.action_label
                and self.joint_names == other.joint_names and self.object_ids == other.object_ids
                and self.name == other.name and self.frames == other.frames)


def angular_velocity(q0: np.ndarray, q1: np.ndarray, rate: float) -> np.ndarray:
    """World-frame angular velocity taking ``q0`` to ``q1`` in one frame."""
    return qlog(qnormalize(qmul(q1, qconj(q0)))) * rate


def finite_difference_velocities(clip: MotionClip, objects: bool = True) -> MotionClip:
    """Fill every frame's velocity by forward differences; the last frame
    repeats the penultimate one."""
    if len(clip.frames) < 2:
        raise ClipError("finite differences need at least 2 frames")
    rate = clip.frame_rate
    frames = clip.frames
    n = len(frames)
    vels = []
    for t in range(n - 1):
        a, b = frames[t].pose, frames[t + 1].pose
        vels.append(Velocity(
            (b.root_pos - a.root_pos) * rate,
            angular_velocity(a.root_rot.as_array(), b.root_rot.as_array(), rate),
            (b.joint_angles - a.joint_angles) * rate,
        ))
    vels.append(vels[-1])

    obj_vels = [None] * n
    if objects and frames[0].objects:
        obj_vels = []
        for t in range(n):
            ta = t if t < n - 1 else n - 2
            row = []
            for oa in frames[ta].objects:
                ob = next(o for o in frames[ta + 1].objects if o.object_id == oa.object_id)
                lin = (ob.pose.translation - oa.pose.translation) * rate
                ang = angular_velocity(oa.pose.rotation.as_array(), ob.pose.rotation.as_array(), rate)
                row.append((lin, ang))
            obj_vels.append(row)

    out = []
    for t, fr in enumerate(frames):
        objs = fr.objects
        if obj_vels[t] is not None:
            objs = tuple(ObjectState(o.object_id, o.pose, lin, ang)
                         for o, (lin, ang) in zip(fr.objects, obj_vels[t]))
        out.append(Frame(fr.pose, vels[t], objs, fr.head))
    return clip.with_frames(out)


def rotate_vec(q: UnitQuaternion, v) -> np.ndarray:
    return qrotate(q.as_array(), v)


def homogeneous(rot: np.ndarray, pos: np.ndarray) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = qmatrix(rot)
    m[:3, 3] = pos
    return m
