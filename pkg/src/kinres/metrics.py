"""Pose-estimation metrics over pairs of motion clips, and the CSV report."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from kinres.core.types import MotionClip, homogeneous

CSV_COLUMNS = ("action", "e_root", "e_joint", "e_vel", "a_accel", "e_mpjpe", "unit_mode", "n_clips")
UNIT_MODES = ("angular", "linear")


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricReport:
    action: str
    e_root: float
    e_joint: float
    e_vel: float
    a_accel: float
    e_mpjpe: Optional[float] = None
    unit_mode: str = "angular"
    n_clips: int = 1

    def __post_init__(self):
        if self.unit_mode not in UNIT_MODES:
            raise MetricError(f"unit_mode must be one of {UNIT_MODES}")
        for k in ("e_root", "e_joint", "e_vel", "a_accel", "e_mpjpe"):
            v = getattr(self, k)
            if v is not None and not v >= 0:
                raise MetricError(f"{k} must be nonnegative, got {v}")


def _check_pair(gen: MotionClip, ref: MotionClip):
    if len(gen) != len(ref):
        raise MetricError(f"clip lengths differ: {gen.name or 'gen'} has {len(gen)} frames, "
                          f"{ref.name or 'ref'} has {len(ref)}")
    if gen.dof != ref.dof:
        raise MetricError(f"DoF differ: {gen.dof} vs {ref.dof}")


def wrap(a: np.ndarray) -> np.ndarray:
    """Map angles to (-pi, pi]."""
    return -np.remainder(-np.asarray(a, float) + math.pi, 2 * math.pi) + math.pi


def root_matrices(clip: MotionClip) -> np.ndarray:
    return np.stack([homogeneous(f.pose.root_rot.as_array(), f.pose.root_pos) for f in clip.frames])


def e_root(gen: MotionClip, ref: MotionClip) -> float:
    """Mean Frobenius norm of ``I - M_t inv(M_ref_t)`` over frames."""
    _check_pair(gen, ref)
    m = root_matrices(gen)
    mr = root_matrices(ref)
    eye = np.eye(4)
    vals = [np.linalg.norm(eye - a @ np.linalg.inv(b)) for a, b in zip(m, mr)]
    return float(np.mean(vals))


def e_joint(gen: MotionClip, ref: MotionClip) -> float:
    _check_pair(gen, ref)
    d = wrap(gen.joint_angles() - ref.joint_angles())
    return float(np.mean(np.linalg.norm(d, axis=1)))


def joint_positions(clip: MotionClip, model, sites: Optional[Sequence[str]] = None) -> np.ndarray:
    """(T, J, 3) world positions of ``sites`` (default: the model's MPJPE set)."""
    from kinres.sim.simulator import pose_site_positions
    names = tuple(sites) if sites is not None else model.mpjpe_sites
    if not names:
        raise MetricError("no joints selected for position metrics")
    missing = [n for n in names if n not in model.sites]
    if missing:
        raise MetricError(f"unmapped joints: {missing}")
    out = np.empty((len(clip), len(names), 3))
    for t, fr in enumerate(clip.frames):
        pos = pose_site_positions(model, fr.pose, names)
        out[t] = [pos[n] for n in names]
    return out


def e_mpjpe(gen: MotionClip, ref: MotionClip, model, sites=None, per_joint: bool = False) -> float:
    """Position error in millimeters.

    Default: Frobenius norm of the stacked (J, 3) difference per frame;
    ``per_joint`` averages the per-joint Euclidean errors instead.
    """
    _check_pair(gen, ref)
    d = (joint_positions(gen, model, sites) - joint_positions(ref, model, sites)) * 1000.0
    if per_joint:
        return float(np.mean(np.linalg.norm(d, axis=2)))
    return float(np.mean(np.linalg.norm(d.reshape(d.shape[0], -1), axis=1)))


def _signal(clip: MotionClip, mode: str, model=None, sites=None) -> tuple:
    """Per-frame signal and whether its differences wrap (angles)."""
    if mode == "angular":
        return clip.joint_angles(), True
    if mode == "linear":
        if model is None:
            raise MetricError("linear mode needs a model")
        p = joint_positions(clip, model, sites) * 1000.0
        return p.reshape(p.shape[0], -1), False
    raise MetricError(f"unknown unit mode {mode!r}")


def _rates(x: np.ndarray, rate: float, angular: bool) -> np.ndarray:
    d = np.diff(x, axis=0)
    if angular:
        d = wrap(d)
    return d * rate


def e_vel(gen: MotionClip, ref: MotionClip, mode: str = "angular", model=None, sites=None) -> float:
    """Mean norm of finite-difference velocity errors (rad/s or mm/s)."""
    _check_pair(gen, ref)
    if len(gen) < 2:
        raise MetricError("velocity needs at least 2 frames")
    xg, ang = _signal(gen, mode, model, sites)
    xr, _ = _signal(ref, mode, model, sites)
    d = _rates(xg, gen.frame_rate, ang) - _rates(xr, ref.frame_rate, ang)
    return float(np.mean(np.linalg.norm(d, axis=1)))


def a_accel(gen: MotionClip, mode: str = "angular", model=None, sites=None) -> float:
    """Mean L1 norm of the second finite difference (rad/s^2 or mm/s^2)."""
    if len(gen) < 3:
        raise MetricError(f"acceleration needs at least 3 frames, clip {gen.name!r} has {len(gen)}")
    x, ang = _signal(gen, mode, model, sites)
    v = _rates(x, gen.frame_rate, ang)
    acc = np.diff(v, axis=0) * gen.frame_rate
    return float(np.mean(np.sum(np.abs(acc), axis=1)))


def evaluate_pair(gen: MotionClip, ref: MotionClip, model=None, mode: str = "angular",
                  action: Optional[str] = None, per_joint: bool = False) -> MetricReport:
    _check_pair(gen, ref)
    mp = e_mpjpe(gen, ref, model, per_joint=per_joint) if model is not None and model.mpjpe_sites else None
    return MetricReport(
        action if action is not None else ref.action_label.value,
        e_root(gen, ref), e_joint(gen, ref), e_vel(gen, ref, mode, model),
        a_accel(gen, mode, model), mp, mode, 1)


def aggregate(reports: Iterable[MetricReport]) -> list:
    """Clip-weighted mean per (action, unit mode), sorted by action label."""
    groups = {}
    for r in reports:
        groups.setdefault((r.action, r.unit_mode), []).append(r)
    out = []
    for (action, mode) in sorted(groups):
        rs = groups[(action, mode)]
        n = sum(r.n_clips for r in rs)
        mean = lambda k: sum(getattr(r, k) * r.n_clips for r in rs) / n
        mp = None if any(r.e_mpjpe is None for r in rs) else mean("e_mpjpe")
        out.append(MetricReport(action, mean("e_root"), mean("e_joint"), mean("e_vel"),
                                mean("a_accel"), mp, mode, n))
    return out


def _fmt(v) -> str:
    return "" if v is None else f"{v:.9f}"


def report_csv(reports: Sequence[MetricReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in sorted(reports, key=lambda r: (r.action, r.unit_mode)):
        w.writerow([r.action, _fmt(r.e_root), _fmt(r.e_joint), _fmt(r.e_vel), _fmt(r.a_accel),
                    _fmt(r.e_mpjpe), r.unit_mode, r.n_clips])
    return buf.getvalue()


def emit_report(reports: Sequence[MetricReport], path) -> Path:
    reports = list(reports)
    if not reports:
        raise MetricError("no reports to emit")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report_csv(reports))
    return path
