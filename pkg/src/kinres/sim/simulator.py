"""Simulator state, PD actuation, stepping, termination and feature extraction."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from kinres.core.quat import UnitQuaternion, qfrom_matrix, qmatrix
from kinres.core.types import HeadSample, ObjectState, Pose, Transform, Velocity
from kinres.sim import dynamics
from kinres.sim.model import HumanoidModel
from kinres.sim.scene import Scene, SimConfig


class SimulationDiverged(RuntimeError):
    pass


class Termination(str, enum.Enum):
    ALIVE = "alive"
    FALLEN = "fallen"
    HORIZON = "horizon"


@dataclass(frozen=True)
class SimState:
    pose: Pose
    velocity: Velocity
    objects: tuple = ()
    sim_time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))

    @property
    def humanoid(self) -> tuple:
        return self.pose, self.velocity

    def object(self, object_id: str) -> ObjectState:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise KeyError(object_id)


@dataclass(frozen=True)
class SimFeatures:
    pose: Pose
    velocity: Velocity
    end_effectors: dict
    head: HeadSample
    sites: dict = field(default_factory=dict)


def pd_torque(model: HumanoidModel, target, pose, vel, torque_limit=math.inf) -> np.ndarray:
    """Per-DoF PD torque ``kp * (target - pose) - kd * vel``, clamped to the limit."""
    target = np.asarray(target, dtype=float)
    pose = np.asarray(pose, dtype=float)
    vel = np.asarray(vel, dtype=float)
    n = model.dof
    for name, v in (("target", target), ("pose", pose), ("vel", vel)):
        if v.shape != (n,):
            raise ValueError(f"{name} has shape {v.shape}, model has {n} DoF")
    tau = model.kp * (target - pose) - model.kd * vel
    lim = np.broadcast_to(np.asarray(torque_limit, dtype=float), (n,))
    return np.clip(tau, -lim, lim)


def state_to_arrays(state: SimState) -> tuple:
    qpos = np.concatenate([state.pose.root_pos, state.pose.root_rot.as_array(),
                           state.pose.joint_angles])
    qvel = np.concatenate([state.velocity.root_lin, state.velocity.root_ang,
                           state.velocity.joint_vel])
    return qpos, qvel


class Simulator:
    """Owns the flattened model/scene arrays for one (model, scene, config)."""

    def __init__(self, model: HumanoidModel, scene: Optional[Scene] = None,
                 cfg: Optional[SimConfig] = None):
        self.model = model
        self.scene = scene if scene is not None else Scene()
        self.cfg = cfg if cfg is not None else SimConfig()
        self._build_scene_arrays()
        c = self.cfg
        self._contact = np.array([c.contact_stiffness, c.contact_damping, c.friction_viscosity,
                                  c.ground_friction, 1.0 if c.ground else 0.0])
        self._limits = np.array([c.joint_limit_stiffness, c.joint_limit_damping])
        self._gravity = np.asarray(c.gravity, dtype=float)
        self._torque_limit = np.full(model.dof, float(c.torque_limit))

    def _build_scene_arrays(self):
        b_pos, b_R, b_half, b_mu, b_body = [], [], [], [], []
        self._dynamic = []
        for obj in self.scene.objects:
            if not obj.static:
                bidx = len(self._dynamic)
                self._dynamic.append(obj)
            else:
                bidx = -1
            t = obj.initial.pose
            rot = qmatrix(t.rotation.as_array())
            for center, half in obj.boxes:
                b_pos.append(t.translation + rot @ np.asarray(center, float))
                b_R.append(rot)
                b_half.append(half)
                b_mu.append(obj.friction)
                b_body.append(bidx)
        self._b_pos = np.array(b_pos, dtype=float).reshape(-1, 3)
        self._b_R = np.array(b_R, dtype=float).reshape(-1, 3, 3)
        self._b_half = np.array(b_half, dtype=float).reshape(-1, 3)
        self._b_mu = np.array(b_mu, dtype=float)
        self._b_body = np.array(b_body, dtype=np.int64)
        self._d_mass = np.array([o.mass for o in self._dynamic], dtype=float)
        self._d_inertia = np.array([o.box_inertia() for o in self._dynamic], dtype=float).reshape(-1, 3)

    def initial_objects(self) -> tuple:
        return self.scene.initial_states()

    def step(self, state: SimState, pd_target) -> SimState:
        m = self.model
        target = np.asarray(pd_target, dtype=float)
        if target.shape != (m.dof,):
            raise ValueError(f"pd target has shape {target.shape}, model has {m.dof} DoF")
        qpos, qvel = state_to_arrays(state)
        if m.fixed_base:
            qvel[:6] = 0.0
        by_id = {o.object_id: o for o in state.objects}
        nb = len(self._dynamic)
        d_pos = np.zeros((nb, 3))
        d_quat = np.zeros((nb, 4))
        d_lin = np.zeros((nb, 3))
        d_ang = np.zeros((nb, 3))
        for k, obj in enumerate(self._dynamic):
            s = by_id.get(obj.object_id, obj.initial)
            d_pos[k] = s.pose.translation
            d_quat[k] = s.pose.rotation.as_array()
            d_lin[k] = s.lin_vel
            d_ang[k] = s.ang_vel
        cfg = self.cfg
        try:
            self._last = dynamics.simulate(
                qpos, qvel, target, cfg.substeps, cfg.sim_dt, self._gravity, m.fixed_base, cfg.stable_pd,
                self._torque_limit, self._contact, self._limits,
                m.parent, m.offset, m.dof_start, m.dof_count, m.dof_axis, m.mass, m.com, m.inertia,
                m.ancestor, m.kp, m.kd, m.lower, m.upper,
                m.contact_link, m.contact_point, m.contact_radius, m.contact_is_foot,
                self._b_pos.copy(), self._b_R.copy(), self._b_half, self._b_mu, self._b_body,
                d_pos, d_quat, d_lin, d_ang, self._d_mass, self._d_inertia)
        except np.linalg.LinAlgError:
            raise SimulationDiverged(
                f"singular or non-finite dynamics at t={state.sim_time:.4f}s") from None
        if not (np.all(np.isfinite(qpos)) and np.all(np.isfinite(qvel))
                and np.all(np.isfinite(d_pos)) and np.all(np.isfinite(d_lin))):
            raise SimulationDiverged(f"non-finite state at t={state.sim_time + cfg.control_dt:.4f}s")
        dyn_index = {o.object_id: k for k, o in enumerate(self._dynamic)}
        objects = []
        for s in (state.objects or self.scene.initial_states()):
            k = dyn_index.get(s.object_id)
            if k is None:
                objects.append(s)
            else:
                objects.append(ObjectState(
                    s.object_id,
                    Transform(UnitQuaternion.from_array(d_quat[k], normalize=True), d_pos[k]),
                    d_lin[k], d_ang[k]))
        nd = m.dof
        pose = Pose(qpos[0:3], UnitQuaternion.from_array(qpos[3:7], normalize=True), qpos[7:7 + nd])
        vel = Velocity(qvel[0:3], qvel[3:6], qvel[6:6 + nd])
        return SimState(pose, vel, tuple(objects), state.sim_time + cfg.control_dt)

    def link_frames(self, state: SimState):
        m = self.model
        qpos, qvel = state_to_arrays(state)
        o, R, w, vo, _, _, _ = dynamics.forward_kinematics(
            qpos[0:3], qpos[3:7], qpos[7:], qvel[0:3], qvel[3:6], qvel[6:],
            m.parent, m.offset, m.dof_start, m.dof_count, m.dof_axis)
        return o, R, w, vo

    def site_positions(self, state: SimState, names=None) -> dict:
        o, R, _, _ = self.link_frames(state)
        names = names if names is not None else self.model.site_names()
        out = {}
        for n in names:
            s = self.model.sites[n]
            out[n] = o[s.link] + R[s.link] @ s.point
        return out

    def extract_features(self, state: SimState) -> SimFeatures:
        m = self.model
        o, R, w, vo = self.link_frames(state)
        sites = {}
        for n, s in m.sites.items():
            sites[n] = o[s.link] + R[s.link] @ s.point
        ee = {n: sites[n] for n in m.end_effectors}
        hs = m.sites[m.head_site]
        hl = hs.link
        r = R[hl] @ hs.point
        hvel = vo[hl] + dynamics.cross(w[hl], r)
        hrot = UnitQuaternion.from_array(_mat_to_quat(R[hl]), normalize=True)
        head = HeadSample(sites[m.head_site], hrot, hvel)
        return SimFeatures(state.pose, state.velocity, ee, head, sites)

    def nonfoot_ground_contact(self, state: SimState) -> bool:
        if not self.cfg.ground:
            return False
        m = self.model
        o, R, _, _ = self.link_frames(state)
        for ci in range(m.contact_link.shape[0]):
            if m.contact_is_foot[ci]:
                continue
            i = m.contact_link[ci]
            z = (o[i] + R[i] @ m.contact_point[ci])[2]
            if z - m.contact_radius[ci] < 0.0:
                return True
        return False

    def detect_termination(self, state: SimState) -> Termination:
        return detect_termination(state, self.cfg, self)


def _mat_to_quat(R: np.ndarray) -> np.ndarray:
    return qfrom_matrix(R)


def pose_link_frames(model: HumanoidModel, pose: Pose, velocity: Optional[Velocity] = None):
    """World link origins, rotations, angular and origin linear velocities."""
    vel = velocity if velocity is not None else Velocity.zeros(model.dof)
    o, R, w, vo, _, _, _ = dynamics.forward_kinematics(
        np.asarray(pose.root_pos, float), pose.root_rot.as_array(), np.asarray(pose.joint_angles, float),
        np.asarray(vel.root_lin, float), np.asarray(vel.root_ang, float), np.asarray(vel.joint_vel, float),
        model.parent, model.offset, model.dof_start, model.dof_count, model.dof_axis)
    return o, R, w, vo


def pose_site_positions(model: HumanoidModel, pose: Pose, names=None) -> dict:
    o, R, _, _ = pose_link_frames(model, pose)
    names = names if names is not None else model.site_names()
    return {n: o[model.sites[n].link] + R[model.sites[n].link] @ model.sites[n].point for n in names}


def pose_head_sample(model: HumanoidModel, pose: Pose, velocity: Optional[Velocity] = None) -> HeadSample:
    o, R, w, vo = pose_link_frames(model, pose, velocity)
    hs = model.sites[model.head_site]
    r = R[hs.link] @ hs.point
    return HeadSample(o[hs.link] + r, UnitQuaternion.from_array(qfrom_matrix(R[hs.link]), normalize=True),
                      vo[hs.link] + dynamics.cross(w[hs.link], r))


def detect_termination(state: SimState, cfg: SimConfig, sim: Optional[Simulator] = None) -> Termination:
    """``fallen`` on low root or non-foot ground contact, ``horizon`` at the episode end."""
    if not sim or not sim.model.fixed_base:
        if state.pose.root_pos[2] < cfg.kill_height:
            return Termination.FALLEN
        if sim is not None and sim.nonfoot_ground_contact(state):
            return Termination.FALLEN
    if state.sim_time >= cfg.horizon_time - 1e-9:
        return Termination.HORIZON
    return Termination.ALIVE


def step(state: SimState, pd_target, cfg: SimConfig, model: HumanoidModel,
         scene: Optional[Scene] = None) -> SimState:
    return Simulator(model, scene, cfg).step(state, pd_target)


def extract_sim_features(state: SimState, model: HumanoidModel) -> SimFeatures:
    return Simulator(model).extract_features(state)


def rest_state(model: HumanoidModel, scene: Optional[Scene] = None, root_pos=None,
               yaw: float = 0.0) -> SimState:
    pos = np.array([0.0, 0.0, model.root_height]) if root_pos is None else np.asarray(root_pos, float)
    pose = Pose(pos, UnitQuaternion.from_axis_angle((0, 0, 1), yaw), np.zeros(model.dof))
    objs = scene.initial_states() if scene is not None else ()
    return SimState(pose, Velocity.zeros(model.dof), objs, 0.0)
