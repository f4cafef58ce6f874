"""PPO training and fine-tuning loops with the training-curve CSV."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from kinres.trainer.env import FinetuneTarget, ImitationEnv, collect
from kinres.trainer.policy import (PolicyParams, init_policy, load_optimizer_state, optimizer_state)
from kinres.trainer.ppo import PPOHyper, PPOOptimizer, make_batch

CURVE_COLUMNS = ("iteration", "mean_reward", "episode_length", "kl", "clip_frac")


@dataclass(frozen=True)
class TrainHyper:
    iterations: int = 200
    steps_per_iter: int = 2048
    ppo: PPOHyper = PPOHyper()
    hidden: tuple = (512, 256)
    log_std: float = -1.0
    seed: int = 0
    workers: int = 1
    value_warmup: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.steps_per_iter < 1:
            raise ValueError("iterations must be >= 0 and steps_per_iter >= 1")
        if isinstance(self.ppo, dict):
            object.__setattr__(self, "ppo", PPOHyper(**self.ppo))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


@dataclass
class TrainOutcome:
    policy: PolicyParams
    iteration: int
    curve: list = field(default_factory=list)
    optimizer: Optional[dict] = None


def _fmt(v) -> str:
    return repr(int(v)) if isinstance(v, (int, np.integer)) else repr(float(v))


def write_curve(rows: Sequence[dict], path, append: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not (append and path.exists())
    with open(path, "w" if new else "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(CURVE_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in CURVE_COLUMNS])
    return path


def train_policy(envs: Sequence[ImitationEnv], hyper: TrainHyper = TrainHyper(),
                 policy: Optional[PolicyParams] = None, start_iteration: int = 0,
                 optimizer: Optional[dict] = None, frozen: Optional[PolicyParams] = None,
                 update_policy: bool = True, log: Optional[Callable] = None,
                 callback: Optional[Callable] = None) -> TrainOutcome:
    """Collect, update, repeat.  ``callback(iteration, policy, row)`` may
    return True to stop early."""
    if not envs:
        raise ValueError("no environments")
    if policy is None:
        policy = init_policy(envs[0].obs_dim, envs[0].act_dim, hyper.hidden, hyper.log_std, hyper.seed)
    if policy.sizes["obs_dim"] != envs[0].obs_dim or policy.sizes["act_dim"] != envs[0].act_dim:
        raise ValueError(f"policy sizes {policy.sizes} do not match env ({envs[0].obs_dim}, {envs[0].act_dim})")
    opt = PPOOptimizer(policy, hyper.ppo)
    if optimizer is not None:
        load_optimizer_state(opt.opt, optimizer)
    out = TrainOutcome(policy, start_iteration)
    if hyper.iterations and float(policy.obs_count) == 0:
        # seed the observation statistics so the first update does not see
        # a jump from the identity normalization
        warm = collect(envs, policy, hyper.steps_per_iter, hyper.seed, 2 ** 31 - 1, hyper.workers, True, frozen)
        policy.update_normalizer(np.concatenate([np.asarray(e.obs, float) for e in warm if len(e)]))
    for it in range(start_iteration, start_iteration + hyper.iterations):
        eps = collect(envs, policy, hyper.steps_per_iter, hyper.seed, it, hyper.workers, True, frozen)
        batch = make_batch(eps, hyper.ppo.gamma, hyper.ppo.gae_lambda)
        rng = np.random.default_rng(np.random.SeedSequence([hyper.seed, it, 1]))
        warming = it < hyper.value_warmup
        stats = opt.update(batch, rng, update_policy and not warming)
        policy.update_normalizer(batch.obs)
        row = {"iteration": it + 1, "mean_reward": float(batch.rewards.mean()),
               "episode_length": float(np.mean(batch.episode_lengths)), "kl": stats.kl,
               "clip_frac": stats.clip_frac}
        out.curve.append(row)
        out.iteration = it + 1
        if log is not None:
            log(f"iter {it + 1} reward {row['mean_reward']:.4f} len {row['episode_length']:.1f} "
                f"kl {stats.kl:.4f} clip {stats.clip_frac:.3f}")
        if callback is not None and callback(it + 1, policy, row):
            break
    out.optimizer = optimizer_state(opt.opt)
    return out


def finetune(policy: PolicyParams, frozen: PolicyParams, envs: Sequence[ImitationEnv],
             heads: Sequence, hyper: TrainHyper = TrainHyper(), log: Optional[Callable] = None,
             callback: Optional[Callable] = None) -> TrainOutcome:
    """PPO on the fine-tuning reward against ``heads``; action regularization
    queries ``frozen``, which is never modified.  Both the policy and the value
    function are updated.  ``policy`` is updated in place on a copy-free
    basis; pass a clone to keep the original."""
    ft_envs = []
    for env in envs:
        if len(heads) < env.horizon + 1:
            raise ValueError(f"head trajectory has {len(heads)} samples, need {env.horizon + 1}")
        ft = ImitationEnv(env.model, env.ref, env.scene, env.cfg, env.weights, env.mode, env.context,
                          env.kin_refs, env.horizon, env.init, env.kin_states, env.random_start,
                          FinetuneTarget(tuple(heads), frozen), max_objects=len(env.object_ids))
        ft.object_ids = env.object_ids
        ft_envs.append(ft)
    if hyper.iterations == 0:
        return TrainOutcome(policy, 0)
    return train_policy(ft_envs, hyper, policy, frozen=frozen, log=log, callback=callback)
