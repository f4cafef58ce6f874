"""Kinematic pose regressor: a gated recurrent encoder over context features
followed by a per-frame MLP decoder, trained with a plain MSE on the raw
kinematic state vector."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from kinres.core.quat import UnitQuaternion
from kinres.core.types import Frame, MotionClip, Pose, Velocity

CHECKPOINT_VERSION = 1
DTYPE = torch.float64


class RegressorError(ValueError):
    pass


class RegressorDiverged(RuntimeError):
    pass


def normalize_or_identity(q: np.ndarray, eps: float = 1e-12) -> UnitQuaternion:
    n = float(np.linalg.norm(q))
    if not n > eps or not math.isfinite(n):
        return UnitQuaternion()
    return UnitQuaternion.from_array(np.asarray(q, float) / n, normalize=True)


@dataclass(frozen=True)
class KinematicState:
    """Planar root position, root orientation, joint angles and velocities."""
    root_xy: np.ndarray
    root_rot: UnitQuaternion
    joint_angles: np.ndarray
    root_lin: np.ndarray
    root_ang: np.ndarray
    joint_vel: np.ndarray

    @staticmethod
    def raw_dim(dof: int) -> int:
        return 12 + 2 * dof

    def to_raw(self) -> np.ndarray:
        return np.concatenate([self.root_xy, self.root_rot.as_array(), self.joint_angles,
                               self.root_lin, self.root_ang, self.joint_vel])

    @classmethod
    def from_raw(cls, v, dof: int) -> "KinematicState":
        v = np.asarray(v, float)
        if v.shape != (cls.raw_dim(dof),):
            raise RegressorError(f"raw state must have {cls.raw_dim(dof)} values, got {v.shape}")
        return cls(v[0:2].copy(), normalize_or_identity(v[2:6]), v[6:6 + dof].copy(),
                   v[6 + dof:9 + dof].copy(), v[9 + dof:12 + dof].copy(), v[12 + dof:].copy())

    @classmethod
    def from_frame(cls, frame: Frame) -> "KinematicState":
        if frame.velocity is None:
            raise RegressorError("frame has no velocities")
        p, v = frame.pose, frame.velocity
        return cls(np.array(p.root_pos[:2]), p.root_rot, np.array(p.joint_angles),
                   np.array(v.root_lin), np.array(v.root_ang), np.array(v.joint_vel))

    def to_velocity(self) -> Velocity:
        return Velocity(self.root_lin, self.root_ang, self.joint_vel)

    def to_pose(self, model=None, height: Optional[float] = None) -> Pose:
        """Pose with root height from ``height``, or completed so the lowest
        contact point of ``model`` touches the ground."""
        if height is None:
            height = complete_height(model, self.root_rot, self.joint_angles) if model is not None else 0.0
        return Pose(np.array([self.root_xy[0], self.root_xy[1], height]), self.root_rot, self.joint_angles)


def complete_height(model, root_rot: UnitQuaternion, joint_angles) -> float:
    from kinres.sim.simulator import pose_link_frames
    o, R, _, _ = pose_link_frames(model, Pose(np.zeros(3), root_rot, np.asarray(joint_angles, float)))
    low = math.inf
    for ci in range(model.contact_link.shape[0]):
        i = model.contact_link[ci]
        low = min(low, float((o[i] + R[i] @ model.contact_point[ci])[2]) - model.contact_radius[ci])
    return -low


def clip_targets(clip: MotionClip) -> np.ndarray:
    """(T, raw_dim) target matrix of a clip with velocities."""
    return np.stack([KinematicState.from_frame(f).to_raw() for f in clip.frames])


class RegressorParams(nn.Module):
    """GRU encoder, MLP decoder and fixed input standardization."""

    def __init__(self, feature_dim: int, out_dim: int, hidden: int = 64, mlp: Sequence[int] = (128,)):
        super().__init__()
        self.sizes = {"feature_dim": int(feature_dim), "out_dim": int(out_dim), "hidden": int(hidden),
                      "mlp": [int(m) for m in mlp]}
        self.gru = nn.GRUCell(feature_dim, hidden)
        layers = []
        prev = hidden
        for m in mlp:
            layers += [nn.Linear(prev, m), nn.Tanh()]
            prev = m
        layers.append(nn.Linear(prev, out_dim))
        self.decoder = nn.Sequential(*layers)
        self.register_buffer("in_mean", torch.zeros(feature_dim))
        self.register_buffer("in_std", torch.ones(feature_dim))
        self.to(DTYPE)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, T, d) features to (B, T, out) raw states.

        Unrolled one frame at a time so frame t is computed by the same
        operations whatever the sequence length.
        """
        x = (x - self.in_mean) / self.in_std
        h = x.new_zeros(x.shape[0], self.sizes["hidden"])
        out = []
        for t in range(x.shape[1]):
            h = self.gru(x[:, t], h)
            out.append(self.decoder(h))
        return torch.stack(out, 1)


def init_params(feature_dim: int, out_dim: int, hidden: int = 64, mlp: Sequence[int] = (128,),
                seed: int = 0) -> RegressorParams:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return RegressorParams(feature_dim, out_dim, hidden, mlp)


def _features_tensor(params: RegressorParams, features) -> torch.Tensor:
    x = np.asarray(getattr(features, "values", features), dtype=float)
    if x.ndim != 2 or x.shape[1] != params.sizes["feature_dim"]:
        raise RegressorError(f"features have shape {x.shape}, params expect dim {params.sizes['feature_dim']}")
    return torch.tensor(x, dtype=DTYPE).unsqueeze(0)


def regress_raw(params: RegressorParams, features) -> np.ndarray:
    with torch.no_grad():
        return params(_features_tensor(params, features))[0].numpy()


def regress(params: RegressorParams, features, dof: Optional[int] = None) -> list:
    """One KinematicState per frame."""
    out = regress_raw(params, features)
    dof = dof if dof is not None else (params.sizes["out_dim"] - 12) // 2
    return [KinematicState.from_raw(row, dof) for row in out]


def _targets_tensor(target) -> torch.Tensor:
    if len(target) and isinstance(target[0], KinematicState):
        target = np.stack([s.to_raw() for s in target])
    return torch.as_tensor(np.asarray(target, float), dtype=DTYPE)


def sequence_loss(out: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """(1/T) sum_t ||out_t - target_t||^2."""
    if out.shape != target.shape:
        raise RegressorError(f"output/target shapes differ: {tuple(out.shape)} vs {tuple(target.shape)}")
    return ((out - target) ** 2).sum(-1).mean()


def mse_loss(params: RegressorParams, features, target) -> float:
    t = _targets_tensor(target)
    if len(t) != len(getattr(features, "values", features)):
        raise RegressorError(f"length mismatch: {len(features)} feature frames, {len(t)} targets")
    with torch.no_grad():
        return float(sequence_loss(params(_features_tensor(params, features))[0], t))


def grad(params: RegressorParams, features, target, scale: float = 1.0) -> dict:
    """Gradient of ``scale * mse_loss`` with respect to every parameter."""
    t = _targets_tensor(target)
    params.zero_grad()
    loss = scale * sequence_loss(params(_features_tensor(params, features))[0], t)
    loss.backward()
    out = {n: p.grad.detach().numpy().copy() for n, p in params.named_parameters()}
    params.zero_grad()
    return out


@dataclass(frozen=True)
class RegressorHyper:
    lr: float = 1e-3
    steps: int = 2000
    hidden: int = 64
    mlp: tuple = (128,)
    batch: int = 8
    seed: int = 0
    standardize: bool = True
    log_every: int = 0


@dataclass
class TrainResult:
    params: RegressorParams
    losses: list = field(default_factory=list)

    def smoothed(self, window: int = 10) -> np.ndarray:
        x = np.asarray(self.losses, float)
        if len(x) < window:
            return x
        return np.convolve(x, np.ones(window) / window, mode="valid")


def train_regressor(dataset: Sequence, hyper: RegressorHyper = RegressorHyper(),
                    params: Optional[RegressorParams] = None, log=None) -> TrainResult:
    """Adam on the mean sequence loss over minibatches of (features, targets)
    pairs.  Sequences in a batch must share a length."""
    if not dataset:
        raise RegressorError("empty dataset")
    xs = [np.asarray(getattr(f, "values", f), float) for f, _ in dataset]
    ys = [_targets_tensor(t).numpy() for _, t in dataset]
    for x, y in zip(xs, ys):
        if len(x) != len(y):
            raise RegressorError(f"length mismatch: {len(x)} feature frames, {len(y)} targets")
    if params is None:
        params = init_params(xs[0].shape[1], ys[0].shape[1], hyper.hidden, hyper.mlp, hyper.seed)
        if hyper.standardize:
            cat = np.concatenate(xs)
            params.in_mean.copy_(torch.as_tensor(cat.mean(0)))
            params.in_std.copy_(torch.as_tensor(np.maximum(cat.std(0), 1e-6)))
            with torch.no_grad():
                params.decoder[-1].bias.copy_(torch.as_tensor(np.concatenate(ys).mean(0)))
    opt = torch.optim.Adam(params.parameters(), lr=hyper.lr)
    rng = np.random.default_rng(hyper.seed)
    by_len = {}
    for i, x in enumerate(xs):
        by_len.setdefault(len(x), []).append(i)
    groups = sorted(by_len.values(), key=lambda g: g[0])
    result = TrainResult(params)
    for step in range(hyper.steps):
        g = groups[int(rng.integers(len(groups)))]
        pick = rng.choice(g, size=min(hyper.batch, len(g)), replace=False)
        x = torch.as_tensor(np.stack([xs[i] for i in pick]), dtype=DTYPE)
        y = torch.as_tensor(np.stack([ys[i] for i in pick]), dtype=DTYPE)
        opt.zero_grad()
        loss = ((params(x) - y) ** 2).sum(-1).mean()
        val = float(loss.detach())
        if not math.isfinite(val):
            last = result.losses[-5:]
            raise RegressorDiverged(f"regressor loss became {val} at step {step}; last losses {last}; "
                                    f"lr {hyper.lr}")
        loss.backward()
        opt.step()
        result.losses.append(val)
        if log is not None and hyper.log_every and step % hyper.log_every == 0:
            log(f"step {step} loss {val:.6g}")
    return result


def save_params(params: RegressorParams, path) -> Path:
    """Versioned text checkpoint: sizes plus every tensor with its shape."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = {k: {"shape": list(v.shape), "data": v.detach().reshape(-1).tolist()}
               for k, v in params.state_dict().items()}
    doc = {"version": CHECKPOINT_VERSION, "kind": "regressor", "sizes": params.sizes, "tensors": tensors}
    path.write_text(json.dumps(doc, sort_keys=True) + "\n")
    return path


def load_params(path) -> RegressorParams:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise RegressorError(f"cannot read checkpoint {path}: {e}") from None
    if doc.get("version") != CHECKPOINT_VERSION or doc.get("kind") != "regressor":
        raise RegressorError(f"{path}: unsupported checkpoint version/kind")
    s = doc["sizes"]
    params = RegressorParams(s["feature_dim"], s["out_dim"], s["hidden"], s["mlp"])
    state = {}
    for k, t in doc["tensors"].items():
        state[k] = torch.tensor(t["data"], dtype=DTYPE).reshape(t["shape"])
    params.load_state_dict(state)
    return params
