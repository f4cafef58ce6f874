"""Line-delimited JSON motion-clip files.

Line 1 is a header record; each following line is one frame::

    {"type": "header", "format": "kinres-clip", "version": 1, "frame_rate": 30.0,
     "dof_count": 16, "joint_names": [...], "object_ids": [...], "action_label": "sit"}
    {"t": 0, "root_pos": [...], "root_rot": [w, x, y, z], "joint_angles": [...],
     "root_lin": [...], "root_ang": [...], "joint_vel": [...],
     "objects": [{"id": "chair", "pos": [...], "rot": [...], "lin_vel": [...], "ang_vel": [...]}],
     "head": {"pos": [...], "rot": [...], "lin_vel_world": [...], "lin_vel_local": [...]}}

Velocity keys are optional; if any frame lacks them the loader rebuilds all
velocities by finite differences. Floats are written with ``repr`` so a
save/load round trip is exact.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from kinres.core.quat import QuaternionError, UnitQuaternion
from kinres.core.types import (ClipError, Frame, HeadSample, MotionClip, ObjectState,
                               Pose, Transform, Velocity, finite_difference_velocities)

FORMAT = "kinres-clip"
VERSION = 1


class ClipParseError(ClipError):
    def __init__(self, message: str, frame: int | None = None, path=None):
        self.frame = frame
        self.path = path
        where = f"{path}: " if path else ""
        if frame is not None:
            where += f"frame {frame}: "
        super().__init__(where + message)


def _vec(v) -> list:
    return [float(x) for x in np.asarray(v).reshape(-1)]


def _quat(q: UnitQuaternion) -> list:
    return [q.w, q.x, q.y, q.z]


def frame_to_record(t: int, fr: Frame) -> dict:
    rec = {
        "t": t,
        "root_pos": _vec(fr.pose.root_pos),
        "root_rot": _quat(fr.pose.root_rot),
        "joint_angles": _vec(fr.pose.joint_angles),
    }
    if fr.velocity is not None:
        rec["root_lin"] = _vec(fr.velocity.root_lin)
        rec["root_ang"] = _vec(fr.velocity.root_ang)
        rec["joint_vel"] = _vec(fr.velocity.joint_vel)
    rec["objects"] = [{
        "id": o.object_id,
        "pos": _vec(o.pose.translation),
        "rot": _quat(o.pose.rotation),
        "lin_vel": _vec(o.lin_vel),
        "ang_vel": _vec(o.ang_vel),
    } for o in fr.objects]
    if fr.head is not None:
        rec["head"] = {
            "pos": _vec(fr.head.h_pos),
            "rot": _quat(fr.head.h_rot),
            "lin_vel_world": _vec(fr.head.h_lin_vel_world),
            "lin_vel_local": _vec(fr.head.h_lin_vel_local),
        }
    return rec


def save_clip(clip: MotionClip, path) -> Path:
    path = Path(path)
    header = {
        "type": "header",
        "format": FORMAT,
        "version": VERSION,
        "name": clip.name,
        "frame_rate": float(clip.frame_rate),
        "dof_count": clip.dof,
        "joint_names": list(clip.joint_names),
        "object_ids": list(clip.object_ids),
        "action_label": clip.action_label.value,
    }
    lines = [json.dumps(header)]
    lines += [json.dumps(frame_to_record(t, fr)) for t, fr in enumerate(clip.frames)]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def _arr(rec: dict, key: str, n: int, t: int, path) -> np.ndarray:
    if key not in rec:
        raise ClipParseError(f"missing field {key!r}", t, path)
    a = np.asarray(rec[key], dtype=float)
    if a.shape != (n,):
        raise ClipParseError(f"field {key!r} has length {a.size}, expected {n}", t, path)
    if not np.all(np.isfinite(a)):
        raise ClipParseError(f"field {key!r} has non-finite values", t, path)
    return a


def _q(rec: dict, key: str, t: int, path) -> UnitQuaternion:
    a = _arr(rec, key, 4, t, path)
    try:
        return UnitQuaternion.from_array(a)
    except QuaternionError as e:
        raise ClipParseError(f"field {key!r}: {e}", t, path) from None


def parse_frame(rec: dict, dof: int, t: int, path=None) -> Frame:
    pose = Pose(_arr(rec, "root_pos", 3, t, path), _q(rec, "root_rot", t, path),
                _arr(rec, "joint_angles", dof, t, path))
    vel = None
    if all(k in rec for k in ("root_lin", "root_ang", "joint_vel")):
        vel = Velocity(_arr(rec, "root_lin", 3, t, path), _arr(rec, "root_ang", 3, t, path),
                       _arr(rec, "joint_vel", dof, t, path))
    objects = []
    for o in rec.get("objects", []):
        if "id" not in o:
            raise ClipParseError("object record without id", t, path)
        objects.append(ObjectState(
            str(o["id"]),
            Transform(_q(o, "rot", t, path), _arr(o, "pos", 3, t, path)),
            _arr(o, "lin_vel", 3, t, path) if "lin_vel" in o else np.zeros(3),
            _arr(o, "ang_vel", 3, t, path) if "ang_vel" in o else np.zeros(3),
        ))
    head = None
    if rec.get("head") is not None:
        h = rec["head"]
        local = _arr(h, "lin_vel_local", 3, t, path) if "lin_vel_local" in h else None
        head = HeadSample(_arr(h, "pos", 3, t, path), _q(h, "rot", t, path),
                          _arr(h, "lin_vel_world", 3, t, path), local)
    return Frame(pose, vel, objects, head)


def load_clip(path) -> MotionClip:
    path = Path(path)
    try:
        lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    except OSError as e:
        raise ClipParseError(f"cannot read clip: {e}", path=path) from None
    if not lines:
        raise ClipParseError("empty clip file", path=path)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ClipParseError(f"bad header: {e}", path=path) from None
    if header.get("type") != "header" or header.get("format") != FORMAT:
        raise ClipParseError("first record is not a kinres-clip header", path=path)
    if header.get("version") != VERSION:
        raise ClipParseError(f"unsupported version {header.get('version')!r}", path=path)
    for key in ("frame_rate", "dof_count"):
        if key not in header:
            raise ClipParseError(f"header missing {key!r}", path=path)
    dof = int(header["dof_count"])
    object_ids = tuple(header.get("object_ids", ()))
    frames = []
    for t, ln in enumerate(lines[1:]):
        try:
            rec = json.loads(ln)
        except json.JSONDecodeError as e:
            raise ClipParseError(f"invalid JSON: {e}", t, path) from None
        fr = parse_frame(rec, dof, t, path)
        for o in fr.objects:
            if object_ids and o.object_id not in object_ids:
                raise ClipParseError(f"unknown object id {o.object_id!r}", t, path)
        frames.append(fr)
    try:
        clip = MotionClip(float(header["frame_rate"]), frames, header.get("action_label", "other"),
                          header.get("joint_names", ()), object_ids, header.get("name", ""))
    except ClipError as e:
        raise ClipParseError(str(e), path=path) from None
    if not clip.has_velocities:
        clip = finite_difference_velocities(clip, objects=False)
    return clip
