"""Scene objects (boxes, chairs, obstacles) and the scene description file."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from kinres.core.quat import UnitQuaternion
from kinres.core.types import ObjectState, Transform


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class SceneObject:
    """A rigid object built from boxes placed in the object frame.

    ``mass is None`` marks a static object.  Dynamic objects must consist of a
    single box centered on the object origin.
    """
    object_id: str
    kind: str
    boxes: tuple  # ((center xyz, half extents xyz), ...)
    mass: Optional[float]
    friction: float
    initial: ObjectState

    @property
    def static(self) -> bool:
        return self.mass is None

    def __post_init__(self):
        if self.mass is not None:
            if not self.mass > 0:
                raise SceneError(f"object {self.object_id!r}: dynamic objects need mass > 0")
            if len(self.boxes) != 1 or np.any(np.asarray(self.boxes[0][0]) != 0):
                raise SceneError(f"object {self.object_id!r}: dynamic objects are one centered box")
        if self.friction < 0:
            raise SceneError(f"object {self.object_id!r}: negative friction")

    def box_inertia(self) -> np.ndarray:
        a, b, c = 2 * np.asarray(self.boxes[0][1], float)
        m = self.mass
        return np.array([m * (b * b + c * c), m * (a * a + c * c), m * (a * a + b * b)]) / 12.0


@dataclass(frozen=True)
class Scene:
    objects: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        ids = [o.object_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise SceneError("duplicate object ids in scene")

    @property
    def object_ids(self) -> tuple:
        return tuple(o.object_id for o in self.objects)

    def get(self, object_id: str) -> SceneObject:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise SceneError(f"object id {object_id!r} not in scene")

    def initial_states(self) -> tuple:
        return tuple(o.initial for o in self.objects)

    def with_initial(self, states) -> "Scene":
        by_id = {s.object_id: s for s in states}
        objs = []
        for o in self.objects:
            s = by_id.get(o.object_id, o.initial)
            objs.append(SceneObject(o.object_id, o.kind, o.boxes, o.mass, o.friction, s))
        return Scene(tuple(objs))


def yaw_transform(pos, yaw: float) -> Transform:
    return Transform(UnitQuaternion.from_axis_angle((0, 0, 1), yaw), np.asarray(pos, float))


def make_box(object_id: str, pos, yaw: float = 0.0, half=(0.2, 0.2, 0.2), mass: Optional[float] = 10.0,
             friction: float = 0.5, kind: str = "box") -> SceneObject:
    half = tuple(float(h) for h in half)
    return SceneObject(object_id, kind, (((0.0, 0.0, 0.0), half),), mass, friction,
                       ObjectState(object_id, yaw_transform(pos, yaw)))


def make_chair(object_id: str, pos, yaw: float = 0.0, seat_height: float = 0.38,
               seat_half=(0.22, 0.22), back_height: float = 0.9, friction: float = 0.8) -> SceneObject:
    """Static chair: solid seat block plus a backrest behind it (-x side).

    ``pos`` is the seat center on the ground.
    """
    sh = seat_height / 2
    seat = ((0.0, 0.0, sh), (seat_half[0], seat_half[1], sh))
    bh = (back_height - seat_height) / 2
    back = ((-seat_half[0] - 0.03, 0.0, seat_height + bh), (0.03, seat_half[1], bh))
    return SceneObject(object_id, "chair", (seat, back), None, friction,
                       ObjectState(object_id, yaw_transform(pos, yaw)))


def object_from_dict(d: dict) -> SceneObject:
    kind = d.get("kind", "box")
    pos = d.get("pos", (0, 0, 0))
    yaw = float(d.get("yaw", 0.0))
    oid = str(d["id"])
    if kind == "chair":
        return make_chair(oid, pos, yaw, float(d.get("seat_height", 0.38)),
                          tuple(d.get("seat_half", (0.22, 0.22))),
                          float(d.get("back_height", 0.9)), float(d.get("friction", 0.8)))
    if kind in ("box", "obstacle"):
        mass = d.get("mass", None if kind == "obstacle" else 10.0)
        if d.get("static", False):
            mass = None
        return make_box(oid, pos, yaw, tuple(d.get("half", (0.2, 0.2, 0.2))),
                        None if mass is None else float(mass), float(d.get("friction", 0.5)), kind)
    raise SceneError(f"unknown object kind {kind!r}")


def object_to_dict(o: SceneObject) -> dict:
    pos = [float(x) for x in o.initial.pose.translation]
    q = o.initial.pose.rotation
    yaw = math.atan2(2 * (q.w * q.z + q.x * q.y), 1 - 2 * (q.y ** 2 + q.z ** 2))
    d = {"id": o.object_id, "kind": o.kind, "pos": pos, "yaw": yaw, "friction": o.friction}
    if o.kind == "chair":
        seat = o.boxes[0]
        d["seat_height"] = 2 * seat[1][2]
        d["seat_half"] = [seat[1][0], seat[1][1]]
        back = o.boxes[1]
        d["back_height"] = back[0][2] + back[1][2]
    else:
        d["half"] = list(o.boxes[0][1])
        d["static"] = o.static
        if o.mass is not None:
            d["mass"] = o.mass
    return d


def scene_from_dict(d: dict) -> Scene:
    return Scene(tuple(object_from_dict(o) for o in d.get("objects", ())))


def load_scene(path) -> Scene:
    try:
        d = yaml.safe_load(Path(path).read_text()) or {}
    except OSError as e:
        raise SceneError(f"cannot read scene file {path}: {e}") from None
    return scene_from_dict(d)


def save_scene(scene: Scene, path, model: Optional[str] = None) -> Path:
    d = {}
    if model is not None:
        d["model"] = model
    d["objects"] = [object_to_dict(o) for o in scene.objects]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(d, sort_keys=False))
    return path


@dataclass(frozen=True)
class SimConfig:
    sim_dt: float = 1.0 / 450.0
    control_dt: float = 1.0 / 30.0
    gravity: tuple = (0.0, 0.0, -9.81)
    contact_stiffness: float = 5.0e4
    contact_damping: float = 400.0
    friction_viscosity: float = 300.0
    ground_friction: float = 0.9
    torque_limit: float = 200.0
    joint_limit_stiffness: float = 500.0
    joint_limit_damping: float = 5.0
    stable_pd: bool = True
    ground: bool = True
    kill_height: float = 0.4
    horizon_time: float = math.inf

    def __post_init__(self):
        ratio = self.control_dt / self.sim_dt
        if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
            raise ValueError("control_dt must be an integer multiple of sim_dt")

    @property
    def substeps(self) -> int:
        return int(round(self.control_dt / self.sim_dt))
