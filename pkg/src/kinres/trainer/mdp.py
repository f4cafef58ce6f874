"""MDP state, its flat encoding and the PD target of an action.

Encoding layout, in order (n = DoF, K = object slots, d = context dim):

    humanoid   root height (1), root orientation with heading removed (4),
               joint angles (n), root linear / angular velocity in the
               heading frame (3 + 3), joint velocities (n)
    objects    K slots of 14: presence, position (3), orientation (4),
               linear (3) and angular (3) velocity, all in the heading frame
    reference  wrapped joint deltas q_ref - q (n), root position delta in the
               heading frame (3), reference root orientation relative to the
               heading frame (4)
    context    the feature vector as given (d)
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from kinres.core.quat import qconj, qfrom_axis_angle, qmul, qrotate, qyaw
from kinres.core.types import Frame
from kinres.sim.simulator import SimState

OBJECT_BLOCK = 14


class MdpError(ValueError):
    pass


@dataclass(frozen=True)
class MdpState:
    """Simulated state at frame ``index`` with the aligned reference frame
    (the PD target is built from ``ref``) and context features."""
    sim: SimState
    ref: Frame
    context: np.ndarray
    index: int = 0


def heading_quat(q: np.ndarray) -> np.ndarray:
    return qfrom_axis_angle((0.0, 0.0, 1.0), qyaw(q))


def _canon(q: np.ndarray) -> np.ndarray:
    """Pick the w >= 0 representative of a rotation."""
    return -q if q[0] < 0 else q


def _wrap(a: np.ndarray) -> np.ndarray:
    return np.remainder(a + math.pi, 2 * math.pi) - math.pi


def state_dim(dof: int, n_objects: int, context_dim: int) -> int:
    return (2 * dof + 11) + OBJECT_BLOCK * n_objects + (dof + 7) + context_dim


def encode_state(state: MdpState, object_ids: Sequence[str] = ()) -> np.ndarray:
    """Flat, yaw-invariant encoding; ``object_ids`` fixes the object slots."""
    pose, vel = state.sim.pose, state.sim.velocity
    q = pose.root_rot.as_array()
    h = heading_quat(q)
    hc = qconj(h)
    local = lambda v: qrotate(hc, np.asarray(v, float))
    root = pose.root_pos
    parts = [
        [root[2]],
        _canon(qmul(hc, q)),
        pose.joint_angles,
        local(vel.root_lin),
        local(vel.root_ang),
        vel.joint_vel,
    ]
    for oid in object_ids:
        obj = next((o for o in state.sim.objects if o.object_id == oid), None)
        if obj is None:
            parts.append(np.zeros(OBJECT_BLOCK))
            continue
        parts += [[1.0], local(obj.pose.translation - root), _canon(qmul(hc, obj.pose.rotation.as_array())),
                  local(obj.lin_vel), local(obj.ang_vel)]
    ref = state.ref.pose
    if ref.dof != pose.dof:
        raise MdpError(f"reference has {ref.dof} DoF, state has {pose.dof}")
    parts += [_wrap(ref.joint_angles - pose.joint_angles), local(ref.root_pos - root),
              _canon(qmul(hc, ref.root_rot.as_array()))]
    parts.append(np.asarray(state.context, float).reshape(-1))
    return np.concatenate([np.asarray(p, float).reshape(-1) for p in parts])


def compute_pd_target(kin_pose, action, model=None, lower=None, upper=None) -> np.ndarray:
    """``clamp(kin_pose + action)`` to the joint limits."""
    q = np.asarray(kin_pose, float)
    a = np.asarray(action, float)
    if q.shape != a.shape:
        raise MdpError(f"kinematic pose has {q.shape} entries, action has {a.shape}")
    if model is not None:
        lower, upper = model.lower, model.upper
    out = q + a
    if lower is not None:
        out = np.minimum(np.maximum(out, lower), upper)
    return out


def direct_pd_target(action, model=None) -> np.ndarray:
    """Ablation: the action is the PD target itself."""
    a = np.asarray(action, float)
    return model.clamp(a) if model is not None else a.copy()
