"""Imitation environment, episode rollout and the deterministic worker pool.

Indexing: the state at step t is aligned with reference frame t.  The action
taken there is added to the kinematic reference of frame t+1 to form the PD
target, and the reward compares the state reached after one control period
with frame t+1.
"""
from __future__ import annotations

import math
import multiprocessing as mp
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from kinres.core.types import Frame, MotionClip, Pose, Velocity
from kinres.rewards import RewardWeights, finetune_reward, imitation_reward
from kinres.sim.scene import Scene, SimConfig
from kinres.sim.simulator import (SimState, SimulationDiverged, Simulator, Termination, pose_site_positions)
from kinres.trainer.mdp import MdpState, compute_pd_target, direct_pd_target, encode_state, state_dim
from kinres.trainer.policy import PolicyParams, sample_action, policy_mean
from kinres.trainer.ppo import Episode

MODES = ("residual", "direct")


class EnvError(ValueError):
    pass


def set_initial_state(mode: str, clip: Optional[MotionClip] = None, scene: Optional[Scene] = None,
                      kin_states: Optional[Sequence] = None, model=None, index: int = 0) -> SimState:
    """Train: ground-truth frame ``index`` of ``clip``.  Test: the decoded
    kinematic state (height completed on ``model``) with the scene's object
    poses."""
    if mode == "train":
        if clip is None or not len(clip):
            raise EnvError("train-mode initial state needs a reference clip")
        f = clip.frames[index]
        vel = f.velocity if f.velocity is not None else Velocity.zeros(f.pose.dof)
        return SimState(f.pose, vel, f.objects, 0.0)
    if mode == "test":
        if not kin_states:
            raise EnvError("test-mode initial state needs regressor outputs")
        if model is None:
            raise EnvError("test-mode initial state needs a model")
        k = kin_states[index]
        objs = scene.initial_states() if scene is not None else ()
        return SimState(k.to_pose(model), k.to_velocity(), objs, 0.0)
    raise EnvError(f"unknown initial-state mode {mode!r}")


@dataclass
class FinetuneTarget:
    """Head trajectory and frozen policy for the fine-tuning reward."""
    heads: tuple
    frozen: PolicyParams


class ImitationEnv:
    """Simulator plus reference clip, kinematic reference and context."""

    def __init__(self, model, ref: MotionClip, scene: Optional[Scene] = None, cfg: Optional[SimConfig] = None,
                 weights: Optional[RewardWeights] = None, mode: str = "residual", context=None,
                 kin_refs: Optional[Sequence[Pose]] = None, horizon: Optional[int] = None,
                 init: str = "train", kin_states: Optional[Sequence] = None, random_start: bool = False,
                 finetune: Optional[FinetuneTarget] = None, max_objects: Optional[int] = None):
        if mode not in MODES:
            raise EnvError(f"unknown action mode {mode!r}")
        if len(ref) < 2:
            raise EnvError("reference clip needs at least two frames")
        if not ref.has_velocities:
            raise EnvError("reference clip has no velocities")
        self.model = model
        self.ref = ref
        self.scene = scene if scene is not None else Scene()
        self.cfg = cfg if cfg is not None else SimConfig()
        self.weights = weights if weights is not None else RewardWeights()
        self.mode = mode
        self.kin_refs = tuple(kin_refs) if kin_refs is not None else tuple(f.pose for f in ref.frames)
        if len(self.kin_refs) != len(ref):
            raise EnvError(f"{len(self.kin_refs)} kinematic references for {len(ref)} frames")
        ctx = np.zeros((len(ref), 0)) if context is None else np.asarray(getattr(context, "values", context), float)
        if ctx.ndim != 2 or len(ctx) != len(ref):
            raise EnvError(f"context has shape {ctx.shape}, clip has {len(ref)} frames")
        self.context = ctx
        self.horizon = len(ref) - 1 if horizon is None else min(int(horizon), len(ref) - 1)
        if self.horizon < 1:
            raise EnvError("horizon must be at least 1")
        self.init = init
        self.kin_states = kin_states
        self.random_start = random_start
        self.finetune = finetune
        if finetune is not None and len(finetune.heads) < self.horizon + 1:
            raise EnvError(f"head trajectory has {len(finetune.heads)} samples, need {self.horizon + 1}")
        self.object_ids = self.scene.object_ids
        if max_objects is not None:
            if len(self.object_ids) > max_objects:
                raise EnvError(f"scene has {len(self.object_ids)} objects, slots for {max_objects}")
            self.object_ids = tuple(self.object_ids) + tuple(f"_pad{i}" for i in range(max_objects - len(self.object_ids)))
        self.sim = Simulator(model, self.scene, self.cfg)
        ee = model.end_effectors
        self._ref_ee = [pose_site_positions(model, f.pose, ee) for f in ref.frames]
        self.state: Optional[MdpState] = None
        self.t = 0

    @property
    def obs_dim(self) -> int:
        return state_dim(self.model.dof, len(self.object_ids), self.context.shape[1])

    @property
    def act_dim(self) -> int:
        return self.model.dof

    def _mdp(self, sim: SimState, t: int) -> MdpState:
        nxt = min(t + 1, len(self.ref) - 1)
        return MdpState(sim, Frame(self.kin_refs[nxt]), self.context[t], t)

    def reset(self, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        start = 0
        if self.random_start and rng is not None and self.init == "train":
            start = int(rng.integers(0, self.horizon))
        sim = set_initial_state(self.init, self.ref, self.scene, self.kin_states, self.model, start)
        self.t0 = start
        self.t = start
        self.state = self._mdp(sim, start)
        return self.observe()

    def observe(self) -> np.ndarray:
        return encode_state(self.state, self.object_ids)

    def pd_target(self, action) -> np.ndarray:
        q_ref = self.kin_refs[self.t + 1].joint_angles
        if self.mode == "residual":
            return compute_pd_target(q_ref, action, self.model)
        return direct_pd_target(action, self.model)

    def step(self, action, mu=None, mu_tilde=None) -> tuple:
        """(obs, reward, terminal, truncated, info)."""
        target = self.pd_target(action)
        try:
            sim = self.sim.step(self.state.sim, target)
        except SimulationDiverged as e:
            return self.observe(), 0.0, False, True, {"diverged": True, "error": str(e)}
        self.t += 1
        self.state = self._mdp(sim, self.t)
        feats = self.sim.extract_features(sim)
        if self.finetune is None:
            br = imitation_reward(feats, self.ref.frames[self.t], self.weights, self.model, self._ref_ee[self.t])
        else:
            br = finetune_reward(feats, self.kin_refs[self.t], self.finetune.heads[self.t], mu, mu_tilde,
                                 self.weights, self.model)
        fallen = self.sim.detect_termination(sim) == Termination.FALLEN
        done = self.t - self.t0 >= self.horizon or self.t >= len(self.ref) - 1
        info = {"breakdown": br, "t": self.t, "head": feats.head, "pose": sim.pose, "objects": sim.objects}
        return self.observe(), br.total, fallen, (done and not fallen), info


def episode_seed(seed: int, iteration: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(iteration), int(index)]))


def run_episode(env: ImitationEnv, policy: PolicyParams, rng: np.random.Generator, stochastic: bool = True,
                frozen: Optional[PolicyParams] = None, keep_info: bool = False) -> Episode:
    ep = Episode()
    obs = env.reset(rng)
    frozen = frozen if frozen is not None else (env.finetune.frozen if env.finetune is not None else None)
    while True:
        a, lp, mu = sample_action(policy, obs, stochastic, rng)
        with torch.no_grad():
            v = float(policy.value(torch.as_tensor(obs, dtype=torch.float64)))
        mu_t = policy_mean(frozen, obs) if frozen is not None else None
        nobs, r, terminal, truncated, info = env.step(a, mu, mu_t)
        if info.get("diverged"):
            ep.truncated = True
            ep.terminal = True
            if keep_info:
                ep.info.append(info)
            break
        ep.obs.append(obs)
        ep.actions.append(a)
        ep.rewards.append(r)
        ep.values.append(v)
        ep.log_probs.append(lp)
        ep.means.append(mu)
        if keep_info:
            ep.info.append(info)
        obs = nobs
        if terminal:
            ep.terminal = True
            break
        if truncated:
            ep.truncated = True
            with torch.no_grad():
                ep.last_value = float(policy.value(torch.as_tensor(obs, dtype=torch.float64)))
            break
    return ep


# ---- worker pool -------------------------------------------------------------

_WORKER = {}


def _init_worker(envs, sizes_state, frozen_state):
    torch.set_num_threads(1)
    _WORKER["envs"] = envs
    _WORKER["policy"] = _rebuild(*sizes_state)
    _WORKER["frozen"] = _rebuild(*frozen_state) if frozen_state is not None else None


def _rebuild(sizes, state):
    p = PolicyParams(sizes["obs_dim"], sizes["act_dim"], sizes["hidden"], 0.0, sizes["value_hidden"])
    p.load_state_dict(state)
    return p


def _worker_episode(args):
    env_idx, seed, stochastic = args
    return run_episode(_WORKER["envs"][env_idx], _WORKER["policy"], np.random.default_rng(seed), stochastic,
                       _WORKER["frozen"])


def _plan(seed: int, iteration: int, index: int, n_envs: int) -> tuple:
    rng = episode_seed(seed, iteration, index)
    env_idx = int(rng.integers(n_envs))
    return env_idx, int(rng.integers(2 ** 63))


def collect(envs: Sequence[ImitationEnv], policy: PolicyParams, min_steps: int, seed: int = 0,
            iteration: int = 0, workers: int = 1, stochastic: bool = True,
            frozen: Optional[PolicyParams] = None) -> list:
    """Episodes in index order until ``min_steps`` transitions are gathered.

    Episode i uses an environment and a generator drawn from (seed,
    iteration, i) only, so the result does not depend on ``workers``.
    """
    if not envs:
        raise EnvError("no environments")
    episodes = []
    steps = 0
    index = 0
    if workers <= 1:
        while steps < min_steps:
            env_idx, s = _plan(seed, iteration, index, len(envs))
            ep = run_episode(envs[env_idx], policy, np.random.default_rng(s), stochastic, frozen)
            episodes.append(ep)
            steps += len(ep)
            index += 1
        return episodes
    frozen_state = (frozen.sizes, frozen.state_dict()) if frozen is not None else None
    ctx = mp.get_context("fork")
    with ctx.Pool(workers, _init_worker, (list(envs), (policy.sizes, policy.state_dict()), frozen_state)) as pool:
        while steps < min_steps:
            jobs = []
            for k in range(workers):
                env_idx, s = _plan(seed, iteration, index + k, len(envs))
                jobs.append((env_idx, s, stochastic))
            for ep in pool.map(_worker_episode, jobs):
                if steps >= min_steps:
                    break
                episodes.append(ep)
                steps += len(ep)
            index += workers
    return episodes


def evaluate(envs: Sequence[ImitationEnv], policy: PolicyParams, seed: int = 0) -> dict:
    """Deterministic episode on every env; mean reward, r_p and length."""
    rewards, lengths, rp = [], [], []
    for i, env in enumerate(envs):
        ep = run_episode(env, policy, episode_seed(seed, 2 ** 31, i), stochastic=False, keep_info=True)
        rewards.extend(ep.rewards)
        lengths.append(len(ep))
        rp.extend(inf["breakdown"].components.get("r_p", math.nan) for inf in ep.info if "breakdown" in inf)
    return {"mean_reward": float(np.mean(rewards)) if rewards else 0.0,
            "mean_r_p": float(np.mean(rp)) if rp else 0.0,
            "mean_length": float(np.mean(lengths)),
            "survival": float(np.mean([l / e.horizon for l, e in zip(lengths, envs)]))}


def episode_clip(env: ImitationEnv, ep: Episode, name: str = "rollout") -> MotionClip:
    """Simulated trajectory of a kept-info episode as a clip (initial frame
    included)."""
    sim0 = set_initial_state(env.init, env.ref, env.scene, env.kin_states, env.model, env.t0)
    frames = [Frame(sim0.pose, None, sim0.objects)]
    for inf in ep.info:
        if "pose" in inf:
            frames.append(Frame(inf["pose"], None, inf["objects"]))
    return MotionClip(env.ref.frame_rate, tuple(frames), env.ref.action_label, env.ref.joint_names,
                      env.ref.object_ids, name)
