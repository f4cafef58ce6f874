"""Imitation and fine-tuning reward suites.

Every component is ``exp(-k * discrepancy)`` and lies in (0, 1].  Totals are
plain weighted sums; the fine-tuning total gates the kinematic pose term and
the action term with the head-velocity agreement factor ``lam``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Mapping, Optional

import numpy as np

from kinres.core.quat import UnitQuaternion, qangle, qconj, qmul
from kinres.core.types import Frame, HeadSample, Pose

# exponent scales of each term
K_POSE = 5.0
K_EE = 4.5
K_ROOT_ANG_VEL = 0.1
K_ROOT_ROT = 40.0
K_ROOT_POS = 45.0
K_HEAD_POS = 10.0
K_HEAD_ROT = 10.0
K_HEAD_VEL = 0.1
K_ACTION = 1.0
K_LAMBDA = 0.1

IMITATION_TERMS = ("r_p", "r_e", "r_rv", "r_rq", "r_rp")
FINETUNE_TERMS = ("r_hp", "r_hq", "r_hv", "r_p_ft", "r_a")


class RewardError(ValueError):
    pass


@dataclass(frozen=True)
class RewardWeights:
    """Weights of both suites; each suite is normalized to sum to one."""
    w_p: float = 0.5
    w_e: float = 0.2
    w_rv: float = 0.1
    w_rq: float = 0.1
    w_rp: float = 0.1
    w_hp: float = 0.25
    w_hq: float = 0.25
    w_hv: float = 0.1
    w_p_ft: float = 0.3
    w_a: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not (v >= 0 and math.isfinite(v)):
                raise RewardError(f"weight {f.name} must be a finite nonnegative number, got {v}")
            object.__setattr__(self, f.name, v)
        for names in (("w_p", "w_e", "w_rv", "w_rq", "w_rp"),
                      ("w_hp", "w_hq", "w_hv", "w_p_ft", "w_a")):
            total = sum(getattr(self, n) for n in names)
            if total <= 0:
                raise RewardError(f"weights {names} sum to zero")
            if abs(total - 1.0) > 1e-12:
                for n in names:
                    object.__setattr__(self, n, getattr(self, n) / total)

    @property
    def imitation(self) -> tuple:
        return (self.w_p, self.w_e, self.w_rv, self.w_rq, self.w_rp)

    @property
    def finetune(self) -> tuple:
        return (self.w_hp, self.w_hq, self.w_hv, self.w_p_ft, self.w_a)

    @classmethod
    def from_dict(cls, d: Mapping) -> "RewardWeights":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise RewardError(f"unknown reward weight keys: {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RewardBreakdown:
    total: float
    components: dict
    weights: dict = field(default_factory=dict)
    lam: Optional[float] = None

    def row(self) -> dict:
        out = {"total": self.total}
        out.update(self.components)
        if self.lam is not None:
            out["lambda"] = self.lam
        return out


def _angles(p) -> np.ndarray:
    return np.asarray(p.joint_angles if isinstance(p, Pose) else p, dtype=float)


def _hinge_quat(axis, angle: float) -> tuple:
    h = 0.5 * angle
    s = math.sin(h)
    return (math.cos(h), axis[0] * s, axis[1] * s, axis[2] * s)


def _mul(a: tuple, b: tuple) -> tuple:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw)


def joint_distances(gen, ref, model=None) -> np.ndarray:
    """Per-joint geodesic distance between generated and reference angles.

    Hinges on the same link are composed into one rotation in declared
    order; without a model each DoF is its own hinge, which reduces to the
    wrapped absolute angle difference.
    """
    a = _angles(gen)
    b = _angles(ref)
    if a.shape != b.shape:
        raise RewardError(f"DoF mismatch: {a.shape[0]} vs {b.shape[0]}")
    if model is None:
        d = np.abs(np.remainder(a - b + math.pi, 2 * math.pi) - math.pi)
        return d
    if a.shape[0] != model.dof:
        raise RewardError(f"pose has {a.shape[0]} DoF, model has {model.dof}")
    axes = model.dof_axis.tolist()
    a, b = a.tolist(), b.tolist()
    out = np.empty(len(model.joint_groups))
    for g, idx in enumerate(model.joint_groups):
        qa = qb = (1.0, 0.0, 0.0, 0.0)
        for k in idx:
            qa = _mul(qa, _hinge_quat(axes[k], a[k]))
            qb = _mul(qb, _hinge_quat(axes[k], b[k]))
        w, x, y, z = _mul((qb[0], -qb[1], -qb[2], -qb[3]), qa)
        out[g] = 2.0 * math.atan2(math.sqrt(x * x + y * y + z * z), abs(w))
    return out


def pose_reward(gen, ref, model=None) -> float:
    d = joint_distances(gen, ref, model)
    return math.exp(-K_POSE * float(d @ d))


def end_effector_reward(gen_ee: Mapping, ref_ee: Mapping) -> float:
    if set(gen_ee) != set(ref_ee):
        raise RewardError(f"end-effector sets differ: {sorted(gen_ee)} vs {sorted(ref_ee)}")
    s = 0.0
    for k in sorted(gen_ee):
        d = np.asarray(gen_ee[k], float) - np.asarray(ref_ee[k], float)
        s += float(d @ d)
    return math.exp(-K_EE * s)


def _rot(q) -> np.ndarray:
    return q.as_array() if isinstance(q, UnitQuaternion) else np.asarray(q, float)


def root_rewards(gen: tuple, ref: tuple) -> tuple:
    """(r_rv, r_rq, r_rp) from (Pose, Velocity) pairs in world coordinates."""
    gp, gv = gen
    rp, rv = ref
    dl = np.asarray(gv.root_lin) - np.asarray(rv.root_lin)
    dw = np.asarray(gv.root_ang) - np.asarray(rv.root_ang)
    r_rv = math.exp(-float(dl @ dl) - K_ROOT_ANG_VEL * float(dw @ dw))
    ang = qangle(qmul(qconj(_rot(rp.root_rot)), _rot(gp.root_rot)))
    r_rq = math.exp(-K_ROOT_ROT * ang * ang)
    dp = np.asarray(gp.root_pos) - np.asarray(rp.root_pos)
    r_rp = math.exp(-K_ROOT_POS * float(dp @ dp))
    return r_rv, r_rq, r_rp


def _weighted(names, weights, comps) -> float:
    total = 0.0
    for n, w in zip(names, weights):
        total += w * comps[n]
    return total


def imitation_reward(features, ref: Frame, weights: RewardWeights, model=None,
                     ref_ee: Optional[Mapping] = None) -> RewardBreakdown:
    """Weighted imitation reward of simulated ``features`` against frame ``ref``.

    ``ref_ee`` holds reference end-effector positions; when omitted they are
    computed by forward kinematics of ``ref.pose`` (needs ``model``).
    """
    if ref.velocity is None:
        raise RewardError("reference frame has no velocities")
    if ref_ee is None:
        if model is None:
            raise RewardError("need a model or reference end-effector positions")
        from kinres.sim.simulator import pose_site_positions
        ref_ee = pose_site_positions(model, ref.pose, features.end_effectors.keys())
    comps = {
        "r_p": pose_reward(features.pose, ref.pose, model),
        "r_e": end_effector_reward(features.end_effectors, ref_ee),
    }
    comps["r_rv"], comps["r_rq"], comps["r_rp"] = root_rewards(
        (features.pose, features.velocity), (ref.pose, ref.velocity))
    w = weights.imitation
    return RewardBreakdown(_weighted(IMITATION_TERMS, w, comps), comps, dict(zip(IMITATION_TERMS, w)))


def adaptive_lambda(head_lv_ref, head_lv_gen) -> float:
    d = np.asarray(head_lv_ref, float) - np.asarray(head_lv_gen, float)
    return math.exp(-K_LAMBDA * float(d @ d))


def head_rewards(gen: HeadSample, ref: HeadSample) -> tuple:
    """(r_hp, r_hq, r_hv); velocities compared in the world frame."""
    dp = ref.h_pos - gen.h_pos
    r_hp = math.exp(-K_HEAD_POS * float(dp @ dp))
    ang = qangle(qmul(qconj(ref.h_rot.as_array()), gen.h_rot.as_array()))
    r_hq = math.exp(-K_HEAD_ROT * ang * ang)
    dv = ref.h_lin_vel_world - gen.h_lin_vel_world
    r_hv = math.exp(-K_HEAD_VEL * float(dv @ dv))
    return r_hp, r_hq, r_hv


def action_reward(mu, mu_tilde) -> float:
    mu = np.asarray(mu, float)
    mu_tilde = np.asarray(mu_tilde, float)
    if mu.shape != mu_tilde.shape:
        raise RewardError(f"action means differ in shape: {mu.shape} vs {mu_tilde.shape}")
    d = mu_tilde - mu
    return math.exp(-K_ACTION * float(d @ d))


def finetune_reward(features, kin_pose, head_ref: HeadSample, mu, mu_tilde,
                    weights: RewardWeights, model=None) -> RewardBreakdown:
    comps = {}
    comps["r_hp"], comps["r_hq"], comps["r_hv"] = head_rewards(features.head, head_ref)
    comps["r_p_ft"] = pose_reward(features.pose, kin_pose, model)
    comps["r_a"] = action_reward(mu, mu_tilde)
    lam = adaptive_lambda(head_ref.h_lin_vel_local, features.head.h_lin_vel_local)
    w_hp, w_hq, w_hv, w_p, w_a = weights.finetune
    total = (w_hp * comps["r_hp"] + w_hq * comps["r_hq"] + w_hv * comps["r_hv"]
             + w_p * lam * comps["r_p_ft"] + w_a * (1.0 - lam) * comps["r_a"])
    return RewardBreakdown(total, comps, dict(zip(FINETUNE_TERMS, weights.finetune)), lam)
