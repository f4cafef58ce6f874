"""Scripted synthetic motion clips (sit, push, avoid), head trajectories with
drift, and the feature sequences the kinematic regressor consumes.

Clips are kinematic: joint angles come from eased keyframes and a planar
two-link leg IK that keeps stance feet planted.  Velocities are finite
differences of the poses.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from kinres.core.clip_io import load_clip, save_clip
from kinres.core.quat import UnitQuaternion, qfrom_rotvec, qmul
from kinres.core.types import (Frame, HeadSample, MotionClip, ObjectState, Pose, Transform,
                               finite_difference_velocities)
from kinres.sim.model import HumanoidModel, load_model
from kinres.sim.scene import Scene, SceneObject, load_scene, make_box, make_chair, save_scene
from kinres.sim.simulator import pose_head_sample, pose_link_frames

ACTIONS = ("sit", "push", "avoid")
ONE_HOT = ("sit", "push", "avoid", "other")
STAND_HEIGHT = 0.9
WALK_HEIGHT = 0.87
ANKLE_HEIGHT = 0.07
THIGH = 0.40
SHIN = 0.38
HIP_OFFSET = np.array([0.0, 0.09, -0.05])
SWAY = 0.03


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    """One scripted episode.  Style fields left as ``None`` are drawn from
    the seeded generator."""
    action: str
    seed: int = 0
    duration: float = 6.0
    frame_rate: float = 30.0
    radius: float = 3.0
    speed: Optional[float] = None
    step_length: Optional[float] = None
    object_distance: Optional[float] = None

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ScenarioError(f"unknown action {self.action!r}; expected one of {ACTIONS}")
        if not self.duration > 0 or not self.frame_rate > 0:
            raise ScenarioError("duration and frame_rate must be positive")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration * self.frame_rate))


@dataclass(frozen=True)
class DriftModel:
    """Head-trajectory perturbation: Ornstein-Uhlenbeck noise on position and
    orientation, a constant bias rate and a constant offset."""
    pos_noise: float = 0.0
    rot_noise: float = 0.0
    bias_rate: tuple = (0.0, 0.0, 0.0)
    offset: tuple = (0.0, 0.0, 0.0)
    reversion: float = 1.0
    seed: int = 0

    @property
    def is_zero(self) -> bool:
        return (self.pos_noise == 0 and self.rot_noise == 0 and not any(self.bias_rate)
                and not any(self.offset))


@dataclass(frozen=True)
class FeatureSequence:
    """Per-frame context features; rows are frames."""
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError(f"features must be a (T, d) array, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("features contain non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def _ease(t, t0, t1):
    """Cubic ease from 0 at t0 to 1 at t1 with zero end slopes."""
    s = np.clip((np.asarray(t, float) - t0) / max(t1 - t0, 1e-9), 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def _rotz(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def leg_ik(d: np.ndarray) -> tuple:
    """(hip_roll, hip_pitch, knee, ankle_pitch, ankle_roll) that put the ankle
    at offset ``d`` from the hip in the pelvis frame and keep the sole flat."""
    roll = math.atan2(d[1], -d[2])
    x = d[0]
    z = -math.hypot(d[1], d[2])
    r = min(math.hypot(x, z), THIGH + SHIN - 1e-9)
    c_knee = (THIGH ** 2 + SHIN ** 2 - r * r) / (2 * THIGH * SHIN)
    knee = math.pi - math.acos(max(-1.0, min(1.0, c_knee)))
    alpha = math.atan2(x, -z)
    c_b = (THIGH ** 2 + r * r - SHIN ** 2) / (2 * THIGH * r)
    beta = math.acos(max(-1.0, min(1.0, c_b)))
    hip = -(alpha + beta)
    return roll, hip, knee, -(hip + knee), -roll


class _Script:
    """Per-frame arrays a scenario fills in before assembly."""

    def __init__(self, model: HumanoidModel, n: int, rate: float):
        self.model = model
        self.t = np.arange(n) / rate
        self.root = np.zeros((n, 3))
        self.yaw = np.zeros(n)
        self.q = np.zeros((n, model.dof))
        self.feet = None  # (n, 2, 3) ankle targets, left then right
        self.objects = {}  # id -> (n, 3) positions
        self.idx = {name: i for i, name in enumerate(model.joint_names)}

    def set(self, name: str, values):
        if name in self.idx:
            self.q[:, self.idx[name]] = values

    def solve_legs(self):
        for k in range(len(self.t)):
            rz = _rotz(self.yaw[k])
            for side, sgn in (("l", 1.0), ("r", -1.0)):
                hip = self.root[k] + rz @ (HIP_OFFSET * np.array([1.0, sgn, 1.0]))
                d = rz.T @ (self.feet[k, 0 if side == "l" else 1] - hip)
                roll, pitch, knee, ap, ar = leg_ik(d)
                for name, v in (("hip_roll", roll), ("hip_pitch", pitch), ("knee", knee),
                                ("ankle_pitch", ap), ("ankle_roll", ar)):
                    j = self.idx.get(f"{name}_{side}")
                    if j is not None:
                        self.q[k, j] = v


def _walk_feet(t, root_xy, yaw, step_time: float, width: float = 0.09, lift: float = 0.08):
    """Ankle targets for an alternating gait anchored to the root path."""
    n = len(t)
    feet = np.zeros((n, 2, 3))
    cycle = 2.0 * step_time
    swing = 0.8 * step_time
    stance_mid = 0.5 * (cycle - swing)
    tx = lambda s: np.interp(s, t, root_xy[:, 0])
    ty = lambda s: np.interp(s, t, root_xy[:, 1])
    tyaw = lambda s: np.interp(s, t, yaw)

    def place(s, sgn):
        c, si = math.cos(tyaw(s)), math.sin(tyaw(s))
        return np.array([tx(s) - si * sgn * width, ty(s) + c * sgn * width, ANKLE_HEIGHT])

    for f, (sgn, phase) in enumerate(((1.0, 0.0), (-1.0, step_time))):
        # landing times cover the clip so every frame has a previous landing
        lands = np.arange(phase - cycle, t[-1] + 2 * cycle, cycle)
        spots = [place(min(max(s + stance_mid, t[0]), t[-1]), sgn) for s in lands]
        for k, tk in enumerate(t):
            i = int(np.searchsorted(lands, tk, side="right")) - 1
            nxt = i + 1
            lift_off = lands[nxt] - swing
            if tk < lift_off:
                feet[k, f] = spots[i]
            else:
                s = float(_ease(tk, lift_off, lands[nxt]))
                p = (1 - s) * spots[i] + s * spots[nxt]
                dist = np.linalg.norm(spots[nxt][:2] - spots[i][:2])
                u = (tk - lift_off) / swing
                p[2] += lift * min(1.0, dist / 0.2) * math.sin(math.pi * u)
                feet[k, f] = p
    return feet


def _start(rng, spec: ScenarioSpec):
    r = spec.radius * math.sqrt(rng.uniform())
    a = rng.uniform(-math.pi, math.pi)
    heading = rng.uniform(-math.pi, math.pi)
    return np.array([r * math.cos(a), r * math.sin(a)]), heading


def _speed_profile(t, t_go, t_stop, v):
    """Distance travelled under an eased start at t_go and stop at t_stop."""
    dt = t[1] - t[0]
    ramp = 0.6
    speed = v * _ease(t, t_go, t_go + ramp) * (1.0 - _ease(t, t_stop - ramp, t_stop))
    dist = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * dt)])
    return dist, speed


def _script_sit(model, spec, rng, style):
    sc = _Script(model, spec.n_frames, spec.frame_rate)
    t = sc.t
    start, heading = _start(rng, spec)
    seat_h = style["seat_height"]
    back = style["object_distance"]
    t0 = style["t_stand"]
    t1 = t0 + style["t_descend"]
    fwd = np.array([math.cos(heading), math.sin(heading)])
    s = _ease(t, t0, t1)
    # pelvis slides back over the seat while dropping onto it
    back_x = -(back - 0.02) * _ease(t, t0, t0 + 0.8 * (t1 - t0))
    sc.root[:, :2] = start + back_x[:, None] * fwd
    seated_z = seat_h + 0.117
    sc.root[:, 2] = STAND_HEIGHT + (seated_z - STAND_HEIGHT) * s
    sc.yaw[:] = heading
    feet = np.zeros((len(t), 2, 3))
    for f, sgn in enumerate((1.0, -1.0)):
        side = np.array([-math.sin(heading), math.cos(heading)]) * sgn * 0.09
        feet[:, f, :2] = start + side
        feet[:, f, 2] = ANKLE_HEIGHT
    sc.feet = feet
    sc.solve_legs()
    lean = style["lean"]
    mid = 4.0 * s * (1.0 - s)
    sc.set("waist_pitch", lean * mid + 0.12 * s)
    sc.set("shoulder_pitch_l", -0.5 * mid)
    sc.set("shoulder_pitch_r", -0.5 * mid)
    chair_xy = start - back * fwd
    chair = make_chair("chair", (chair_xy[0], chair_xy[1], 0.0), heading, seat_height=seat_h)
    return sc, (chair,), {}


def _walk_path(spec, style, t, start, heading, lateral=None):
    """Root path along ``heading``; ``lateral`` maps distance to a sideways
    offset and its slope."""
    dist, _ = _speed_profile(t, style["t_go"], style["t_stop"], style["speed"])
    fwd = np.array([math.cos(heading), math.sin(heading)])
    left = np.array([-fwd[1], fwd[0]])
    lat, slope = (np.zeros_like(dist), np.zeros_like(dist)) if lateral is None else lateral(dist)
    xy = start + dist[:, None] * fwd + lat[:, None] * left
    yaw = heading + np.arctan(slope)
    return dist, xy, yaw, fwd


def _walk_common(sc, style, dist):
    t = sc.t
    going = _ease(t, style["t_go"], style["t_go"] + 0.6) * (1.0 - _ease(t, style["t_stop"] - 0.6, style["t_stop"]))
    sc.root[:, 2] = STAND_HEIGHT + (WALK_HEIGHT - STAND_HEIGHT) * _ease(t, 0.0, style["t_go"] + 0.3) \
        * (1.0 - _ease(t, style["t_stop"], sc.t[-1] + 1e-6))
    sc.feet = _walk_feet(t, sc.root[:, :2], sc.yaw, style["step_time"])
    # lateral sway toward the stance foot, centred on each single-support phase
    c_left = -0.4 * style["step_time"]
    stepping = (np.linalg.norm(np.diff(sc.feet, axis=0), axis=2).max(axis=1) > 1e-6).astype(float)
    stepping = np.append(stepping, stepping[-1])
    w = max(int(round(0.5 * style["step_time"] / (t[1] - t[0]))), 1)
    env = np.clip(np.convolve(stepping, np.ones(2 * w + 1), mode="same") / w, 0.0, 1.0)
    sway = -style.get("sway", SWAY) * env * np.cos(np.pi * (t - c_left) / style["step_time"])
    sc.root[:, 0] += -np.sin(sc.yaw) * sway
    sc.root[:, 1] += np.cos(sc.yaw) * sway
    sc.solve_legs()
    phase = np.pi * t / style["step_time"]
    swing = 0.3 * going * np.sin(phase)
    return swing


def _script_push(model, spec, rng, style):
    sc = _Script(model, spec.n_frames, spec.frame_rate)
    t = sc.t
    start, heading = _start(rng, spec)
    dist, xy, yaw, fwd = _walk_path(spec, style, t, start, heading)
    sc.root[:, :2] = xy
    sc.yaw[:] = yaw
    swing = _walk_common(sc, style, dist)
    reach = 0.785
    gap = style["object_distance"]
    d_contact = gap - reach
    if d_contact <= 0 or d_contact >= dist[-1] - 0.2:
        raise ScenarioError("box placement leaves no push phase")
    k_contact = int(np.searchsorted(dist, d_contact))
    raise_arms = _ease(t, max(t[k_contact] - 0.8, 0.0), t[k_contact])
    sc.set("shoulder_pitch_l", -1.2 * raise_arms + swing * (1 - raise_arms))
    sc.set("shoulder_pitch_r", -1.2 * raise_arms - swing * (1 - raise_arms))
    sc.set("waist_pitch", 0.15 * raise_arms)
    box_dist = np.maximum(dist - d_contact, 0.0) + gap
    half = style["box_half"]
    pos = np.zeros((len(t), 3))
    pos[:, :2] = start + box_dist[:, None] * fwd
    pos[:, 2] = half[2]
    box = make_box("box", pos[0], heading, half=half, mass=style["box_mass"], friction=0.5)
    return sc, (box,), {"box": pos}


def _script_avoid(model, spec, rng, style):
    sc = _Script(model, spec.n_frames, spec.frame_rate)
    t = sc.t
    start, heading = _start(rng, spec)
    total, _ = _speed_profile(t, style["t_go"], style["t_stop"], style["speed"])
    x_obs = style["object_distance"]
    half = style["box_half"]
    amp = half[1] + 0.65
    sigma = 0.5

    def bump(d):
        u = (d - x_obs) / sigma
        b = amp * np.exp(-u * u)
        return b, -2.0 * u / sigma * b
    dist, xy, yaw, fwd = _walk_path(spec, style, t, start, heading, bump)
    sc.root[:, :2] = xy
    sc.yaw[:] = yaw
    swing = _walk_common(sc, style, dist)
    sc.set("shoulder_pitch_l", swing)
    sc.set("shoulder_pitch_r", -swing)
    c = start + x_obs * fwd
    obs = make_box("obstacle", (c[0], c[1], half[2]), heading, half=half, mass=None, kind="obstacle")
    return sc, (obs,), {}


_SCRIPTS = {"sit": _script_sit, "push": _script_push, "avoid": _script_avoid}


def _style(spec: ScenarioSpec, rng) -> dict:
    speed = spec.speed if spec.speed is not None else rng.uniform(0.45, 0.6)
    length = spec.step_length if spec.step_length is not None else rng.uniform(0.22, 0.3)
    st = {"speed": speed, "step_time": length / speed, "t_go": rng.uniform(0.4, 0.7),
          "t_stop": spec.duration - rng.uniform(0.6, 0.9)}
    if spec.action == "sit":
        st.update(seat_height=rng.uniform(0.38, 0.44), t_stand=rng.uniform(0.8, 1.2),
                  t_descend=rng.uniform(1.6, 2.2), lean=rng.uniform(0.45, 0.65),
                  object_distance=spec.object_distance or rng.uniform(0.38, 0.45))
    elif spec.action == "push":
        st.update(box_half=(0.25, 0.3, 0.6), box_mass=rng.uniform(8.0, 15.0),
                  object_distance=spec.object_distance or rng.uniform(1.2, 1.5))
    else:
        run = speed * (st["t_stop"] - st["t_go"] - 0.6)
        st.update(box_half=(0.2, 0.2, 0.5),
                  object_distance=spec.object_distance or run * rng.uniform(0.45, 0.55))
    return st


def _contact_gap(model, pose: Pose, objects: Sequence[SceneObject], positions=None) -> float:
    """Smallest signed gap between the humanoid's contact spheres and object boxes."""
    o, R, _, _ = pose_link_frames(model, pose)
    best = math.inf
    for obj in objects:
        tr = obj.initial.pose
        if positions is not None and obj.object_id in positions:
            tr = Transform(tr.rotation, positions[obj.object_id])
        rot = tr.rotation.matrix()
        for center, half in obj.boxes:
            bpos = tr.translation + rot @ np.asarray(center, float)
            for ci in range(model.contact_link.shape[0]):
                i = model.contact_link[ci]
                c = o[i] + R[i] @ model.contact_point[ci]
                d = rot.T @ (c - bpos)
                q = np.clip(d, -np.asarray(half), np.asarray(half))
                out = np.linalg.norm(d - q)
                inside = -np.min(np.asarray(half) - np.abs(d)) if out == 0 else out
                best = min(best, inside - model.contact_radius[ci])
    return best


def generate_episode(spec: ScenarioSpec, model: Optional[HumanoidModel] = None) -> tuple:
    """(MotionClip, Scene) for one scenario; deterministic in ``spec``."""
    model = model if model is not None else load_model()
    rng = np.random.default_rng(spec.seed)
    style = _style(spec, rng)
    sc, objs, tracks = _SCRIPTS[spec.action](model, spec, rng, style)
    sc.q = np.clip(sc.q, model.lower, model.upper)
    scene = Scene(objs)
    poses = [Pose(sc.root[k], UnitQuaternion.from_axis_angle((0, 0, 1), sc.yaw[k]), sc.q[k])
             for k in range(len(sc.t))]
    if _contact_gap(model, poses[0], objs) <= 0.0:
        raise ScenarioError(f"{spec.action} seed {spec.seed}: object overlaps the start pose")
    if spec.action == "sit" and poses[-1].root_pos[2] > 0.7 * STAND_HEIGHT:
        raise ScenarioError(f"sit seed {spec.seed}: seated height drop below 30%")
    if spec.action == "push":
        track = tracks["box"]
        if np.linalg.norm(track[-1] - track[0]) <= 0.2:
            raise ScenarioError(f"push seed {spec.seed}: box displacement too small")
    if spec.action == "avoid":
        gap = min(_contact_gap(model, p, objs) for p in poses)
        if gap <= 0.0:
            raise ScenarioError(f"avoid seed {spec.seed}: path collides with the obstacle")
    frames = []
    for k, pose in enumerate(poses):
        states = []
        for obj in objs:
            tr = obj.initial.pose
            if obj.object_id in tracks:
                tr = Transform(tr.rotation, tracks[obj.object_id][k])
            states.append(ObjectState(obj.object_id, tr))
        frames.append(Frame(pose, None, tuple(states)))
    clip = MotionClip(spec.frame_rate, frames, spec.action, model.joint_names, scene.object_ids,
                      f"{spec.action}_{spec.seed}")
    clip = finite_difference_velocities(clip)
    return attach_heads(clip, model), scene


def generate_clip(spec: ScenarioSpec, model: Optional[HumanoidModel] = None) -> MotionClip:
    return generate_episode(spec, model)[0]


def attach_heads(clip: MotionClip, model: HumanoidModel) -> MotionClip:
    """Head samples from forward kinematics; velocity by forward differences."""
    heads = [pose_head_sample(model, f.pose) for f in clip.frames]
    pos = np.array([h.h_pos for h in heads])
    vel = np.diff(pos, axis=0) * clip.frame_rate
    vel = np.vstack([vel, vel[-1:]])
    frames = [Frame(f.pose, f.velocity, f.objects, HeadSample(h.h_pos, h.h_rot, v))
              for f, h, v in zip(clip.frames, heads, vel)]
    return clip.with_frames(frames)


def derive_head_trajectory(clip: MotionClip, drift: Optional[DriftModel] = None) -> tuple:
    """Head samples of ``clip`` perturbed by ``drift``; zero drift returns
    the clip's own samples."""
    if not clip.has_heads:
        raise ScenarioError("clip has no head samples")
    heads = tuple(f.head for f in clip.frames)
    if drift is None or drift.is_zero:
        return heads
    n = len(heads)
    dt = 1.0 / clip.frame_rate
    t = np.arange(n) * dt
    rng = np.random.default_rng(drift.seed)
    ou_p = np.zeros((n, 3))
    ou_r = np.zeros((n, 3))
    a = math.exp(-drift.reversion * dt)
    sd = math.sqrt(max(1.0 - a * a, 0.0))
    for k in range(1, n):
        ou_p[k] = a * ou_p[k - 1] + drift.pos_noise * sd * rng.standard_normal(3)
        ou_r[k] = a * ou_r[k - 1] + drift.rot_noise * sd * rng.standard_normal(3)
    bias = np.asarray(drift.bias_rate, float)
    off = np.asarray(drift.offset, float) + t[:, None] * bias + ou_p
    d_off = np.vstack([np.diff(off, axis=0) / dt, np.zeros((1, 3))])
    d_off[-1] = d_off[-2] if n > 1 else bias
    out = []
    for k, h in enumerate(heads):
        rot = h.h_rot
        if drift.rot_noise > 0:
            rot = UnitQuaternion.from_array(qmul(qfrom_rotvec(ou_r[k]), h.h_rot.as_array()), normalize=True)
        out.append(HeadSample(h.h_pos + off[k], rot, h.h_lin_vel_world + d_off[k]))
    return tuple(out)


HEAD_COLUMNS = ("t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz")


def save_heads(heads: Sequence[HeadSample], path) -> Path:
    """Head-trajectory CSV: frame index, world position, wxyz rotation and
    world linear velocity, all at full precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [",".join(HEAD_COLUMNS)]
    for t, h in enumerate(heads):
        vals = [*h.h_pos, *h.h_rot.as_array(), *h.h_lin_vel_world]
        rows.append(",".join([str(t)] + [repr(float(v)) for v in vals]))
    path.write_text("\n".join(rows) + "\n")
    return path


def load_heads(path) -> tuple:
    p = Path(path)
    try:
        lines = p.read_text().splitlines()
    except OSError as e:
        raise ScenarioError(f"cannot read head trajectory {p}: {e.strerror}") from None
    if not lines or tuple(lines[0].split(",")) != HEAD_COLUMNS:
        raise ScenarioError(f"{p}: expected header {','.join(HEAD_COLUMNS)}")
    out = []
    for i, line in enumerate(lines[1:]):
        try:
            v = [float(x) for x in line.split(",")]
        except ValueError:
            raise ScenarioError(f"{p}: row {i} is not numeric") from None
        if len(v) != len(HEAD_COLUMNS) or int(v[0]) != i:
            raise ScenarioError(f"{p}: malformed row {i}")
        out.append(HeadSample(np.array(v[1:4]), UnitQuaternion.from_array(np.array(v[4:8]), normalize=True),
                              np.array(v[8:11])))
    if not out:
        raise ScenarioError(f"{p}: empty head trajectory")
    return tuple(out)


def synthesize_features(clip: MotionClip, seed: int = 0, noise: float = 0.01,
                        smooth: float = 0.9, heads: Optional[Sequence[HeadSample]] = None) -> FeatureSequence:
    """Head position, orientation and velocity plus smoothed noise, followed
    by an action one-hot: 14 values per frame."""
    heads = heads if heads is not None else derive_head_trajectory(clip)
    rng = np.random.default_rng(seed)
    n = len(heads)
    base = np.array([np.concatenate([h.h_pos, h.h_rot.as_array(), h.h_lin_vel_world]) for h in heads])
    eps = np.zeros_like(base)
    for k in range(n):
        prev = eps[k - 1] if k else 0.0
        eps[k] = smooth * prev + math.sqrt(1 - smooth ** 2) * noise * rng.standard_normal(base.shape[1])
    onehot = np.zeros((n, len(ONE_HOT)))
    onehot[:, ONE_HOT.index(clip.action_label.value)] = 1.0
    return FeatureSequence(np.hstack([base + eps, onehot]))


FEATURE_DIM = 14


def _seeds(seed: int, count: int) -> list:
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(count)]


def generate_dataset(out_dir, n_per_action: int, split: float = 0.8, seed: int = 0,
                     actions: Sequence[str] = ACTIONS, duration: float = 6.0,
                     model: Optional[HumanoidModel] = None) -> dict:
    """Write clips, scenes and features under ``out_dir``; return the manifest."""
    if n_per_action < 2:
        raise ScenarioError("need at least 2 clips per action for a train/test split")
    if not 0 < split < 1:
        raise ScenarioError("split must lie in (0, 1)")
    model = model if model is not None else load_model()
    out = Path(out_dir)
    seeds = _seeds(seed, len(actions) * n_per_action * 4)
    entries = []
    cursor = 0
    n_train = int(round(n_per_action * split))
    n_train = min(max(n_train, 1), n_per_action - 1)
    for action in actions:
        made = 0
        while made < n_per_action:
            if cursor >= len(seeds):
                raise ScenarioError(f"could not place {n_per_action} feasible {action} scenarios")
            s = seeds[cursor]
            cursor += 1
            spec = ScenarioSpec(action, s, duration)
            try:
                entry = write_entry(out, f"{action}_{made:03d}", spec,
                                    "train" if made < n_train else "test", model)
            except ScenarioError:
                continue
            entries.append(entry)
            made += 1
    manifest = {"version": 1, "seed": seed, "split": split, "n_per_action": n_per_action,
                "model": model.name, "clips": entries}
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def write_entry(out: Path, clip_id: str, spec: ScenarioSpec, split: str, model) -> dict:
    clip, scene = generate_episode(spec, model)
    clip = replace_name(clip, clip_id)
    feats = synthesize_features(clip, seed=spec.seed)
    cp = save_clip(clip, out / "clips" / f"{clip_id}.jsonl")
    sp = save_scene(scene, out / "scenes" / f"{clip_id}.yaml")
    fp = out / "features" / f"{clip_id}.npy"
    fp.parent.mkdir(parents=True, exist_ok=True)
    np.save(fp, feats.values)
    return {"id": clip_id, "action": spec.action, "seed": spec.seed, "split": split,
            "spec": asdict(spec), "clip": str(cp.relative_to(out)), "scene": str(sp.relative_to(out)),
            "features": str(fp.relative_to(out))}


def replace_name(clip: MotionClip, name: str) -> MotionClip:
    return MotionClip(clip.frame_rate, clip.frames, clip.action_label, clip.joint_names,
                      clip.object_ids, name)


def load_manifest(path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    try:
        m = json.loads(p.read_text())
    except OSError as e:
        raise ScenarioError(f"cannot read manifest {p}: {e}") from None
    m["root"] = str(p.parent)
    return m


def load_entry(manifest: dict, entry: dict) -> tuple:
    """(clip, scene, features) of one manifest entry."""
    root = Path(manifest["root"])
    clip = load_clip(root / entry["clip"])
    scene = load_scene(root / entry["scene"])
    feats = FeatureSequence(np.load(root / entry["features"]))
    return clip, scene, feats


def select(manifest: dict, split: Optional[str] = None, action: Optional[str] = None) -> list:
    return [e for e in manifest["clips"]
            if (split is None or e["split"] == split) and (action is None or e["action"] == action)]
