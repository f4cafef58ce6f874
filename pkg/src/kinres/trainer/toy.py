"""1-DoF pendulum tracking a sinusoid: the desk-scale sanity task."""
from __future__ import annotations

import math

import numpy as np

from kinres.core.quat import UnitQuaternion
from kinres.core.types import Frame, MotionClip, Pose, finite_difference_velocities
from kinres.sim.model import load_model
from kinres.sim.scene import SimConfig
from kinres.trainer.env import ImitationEnv


def pendulum_reference(model=None, amplitude: float = 1.2, period: float = 1.5, n_frames: int = 61,
                       frame_rate: float = 30.0, phase: float = 0.0) -> MotionClip:
    model = model if model is not None else load_model("pendulum")
    root = np.array([0.0, 0.0, model.root_height])
    t = np.arange(n_frames) / frame_rate
    q = amplitude * np.sin(2 * math.pi * t / period + phase)
    frames = [Frame(Pose(root, UnitQuaternion(), np.array([a]))) for a in q]
    clip = MotionClip(frame_rate, frames, "other", model.joint_names, (), "pendulum")
    return finite_difference_velocities(clip)


def pendulum_envs(model=None, mode: str = "residual", phases=(0.0, 1.5, 3.0, 4.5), **kw) -> list:
    """One environment per starting phase of the same sinusoid."""
    model = model if model is not None else load_model("pendulum")
    cfg = SimConfig(ground=False)
    return [ImitationEnv(model, pendulum_reference(model, phase=p, **kw), cfg=cfg, mode=mode) for p in phases]
