"""Rollout batches, GAE advantages and the clipped-surrogate PPO update."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from kinres.trainer.policy import DTYPE, PolicyParams


class PPODiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class PPOHyper:
    clip: float = 0.2
    epochs: int = 5
    minibatch: int = 256
    gamma: float = 0.99
    gae_lambda: float = 0.95
    lr: float = 3e-4
    value_lr: float = 1e-3
    value_coef: float = 0.5
    max_grad_norm: float = 1.0
    normalize_advantages: bool = True
    target_kl: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise ValueError(f"clip must lie in (0, 1), got {self.clip}")
        if self.epochs < 1 or self.minibatch < 1:
            raise ValueError("epochs and minibatch must be positive")
        if not (0 <= self.gamma <= 1 and 0 <= self.gae_lambda <= 1):
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")


@dataclass
class Episode:
    """One episode of transitions; ``last_value`` bootstraps a truncated end."""
    obs: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    means: list = field(default_factory=list)
    terminal: bool = False
    truncated: bool = False
    last_value: float = 0.0
    info: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rewards)


@dataclass
class RolloutBatch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    log_probs: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    episode_lengths: list = field(default_factory=list)
    episode_returns: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rewards)


def gae(rewards, values, dones, last_values=None, gamma: float = 0.99, lam: float = 0.95) -> tuple:
    """Generalized advantage estimates and returns over concatenated steps.

    ``dones[t]`` marks the last step of an episode; no value flows across it.
    ``last_values[t]`` is the bootstrap value used after step t when it ends
    an episode that was cut short (zero for a true terminal state).
    """
    r = np.asarray(rewards, float)
    v = np.asarray(values, float)
    d = np.asarray(dones, bool)
    boot = np.zeros_like(r) if last_values is None else np.asarray(last_values, float)
    adv = np.zeros_like(r)
    run = 0.0
    for t in range(len(r) - 1, -1, -1):
        if d[t] or t == len(r) - 1:
            nv, run = boot[t], 0.0
        else:
            nv = v[t + 1]
        delta = r[t] + gamma * nv - v[t]
        run = delta + gamma * lam * run
        adv[t] = run
    return adv, adv + v


def make_batch(episodes, gamma: float = 0.99, lam: float = 0.95) -> RolloutBatch:
    if not episodes or not any(len(e) for e in episodes):
        raise ValueError("empty rollout")
    eps = [e for e in episodes if len(e)]
    dones, boots = [], []
    for e in eps:
        dn = np.zeros(len(e), bool)
        dn[-1] = True
        b = np.zeros(len(e))
        b[-1] = 0.0 if e.terminal else e.last_value
        dones.append(dn)
        boots.append(b)
    rewards = np.concatenate([e.rewards for e in eps]).astype(float)
    values = np.concatenate([e.values for e in eps]).astype(float)
    adv, ret = gae(rewards, values, np.concatenate(dones), np.concatenate(boots), gamma, lam)
    return RolloutBatch(
        obs=np.concatenate([np.asarray(e.obs, float) for e in eps]),
        actions=np.concatenate([np.asarray(e.actions, float) for e in eps]),
        rewards=rewards, values=values,
        log_probs=np.concatenate([e.log_probs for e in eps]).astype(float),
        dones=np.concatenate(dones), advantages=adv, returns=ret,
        episode_lengths=[len(e) for e in eps], episode_returns=[float(np.sum(e.rewards)) for e in eps])


def surrogate(ratio: torch.Tensor, adv: torch.Tensor, clip: float) -> torch.Tensor:
    """Per-sample clipped objective min(r A, clip(r, 1-e, 1+e) A)."""
    return torch.min(ratio * adv, torch.clamp(ratio, 1 - clip, 1 + clip) * adv)


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    kl: float
    clip_frac: float
    first_ratio_max_dev: float
    restored: bool = False


class PPOOptimizer:
    """Adam on policy and value parameters with separate learning rates."""

    def __init__(self, policy: PolicyParams, hyper: PPOHyper):
        self.policy = policy
        self.hyper = hyper
        self.opt = torch.optim.Adam([
            {"params": list(policy.policy_parameters()), "lr": hyper.lr},
            {"params": list(policy.value_parameters()), "lr": hyper.value_lr},
        ])

    def update(self, batch: RolloutBatch, rng: Optional[np.random.Generator] = None,
               update_policy: bool = True) -> UpdateStats:
        return ppo_update(self.policy, batch, self.hyper, self.opt, rng, update_policy)


def ppo_update(policy: PolicyParams, batch: RolloutBatch, hyper: PPOHyper,
               opt: Optional[torch.optim.Optimizer] = None, rng: Optional[np.random.Generator] = None,
               update_policy: bool = True) -> UpdateStats:
    """Several epochs of minibatch ascent on the clipped surrogate plus value
    regression.  A non-finite loss restores the parameters held on entry and
    raises PPODiverged."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    if not np.all(np.isfinite(batch.advantages)):
        raise ValueError("non-finite advantages")
    if opt is None:
        opt = PPOOptimizer(policy, hyper).opt
    rng = rng if rng is not None else np.random.default_rng(hyper.seed)
    backup = {k: v.clone() for k, v in policy.state_dict().items()}
    opt_backup = opt.state_dict()
    obs = torch.as_tensor(batch.obs, dtype=DTYPE)
    act = torch.as_tensor(batch.actions, dtype=DTYPE)
    old_lp = torch.as_tensor(batch.log_probs, dtype=DTYPE)
    adv_np = batch.advantages
    if hyper.normalize_advantages and len(adv_np) > 1:
        adv_np = (adv_np - adv_np.mean()) / (adv_np.std() + 1e-8)
    adv = torch.as_tensor(adv_np, dtype=DTYPE)
    ret = torch.as_tensor(batch.returns, dtype=DTYPE)
    n = len(batch)
    with torch.no_grad():
        first_dev = float(torch.max(torch.abs(torch.exp(policy.log_prob(obs, act) - old_lp) - 1)))
    pl_acc, vl_acc, count = 0.0, 0.0, 0
    for _ in range(hyper.epochs):
        if hyper.target_kl and count:
            with torch.no_grad():
                lr = policy.log_prob(obs, act) - old_lp
                if float(((torch.exp(lr) - 1) - lr).mean()) > 1.5 * hyper.target_kl:
                    break
        perm = rng.permutation(n)
        for s in range(0, n, hyper.minibatch):
            idx = torch.as_tensor(perm[s:s + hyper.minibatch])
            lp = policy.log_prob(obs[idx], act[idx])
            ratio = torch.exp(lp - old_lp[idx])
            p_loss = -surrogate(ratio, adv[idx], hyper.clip).mean()
            v_loss = ((policy.value(obs[idx]) - ret[idx]) ** 2).mean()
            loss = (p_loss if update_policy else 0.0 * p_loss) + hyper.value_coef * v_loss
            if not torch.isfinite(loss):
                policy.load_state_dict(backup)
                opt.load_state_dict(opt_backup)
                raise PPODiverged(f"non-finite PPO loss ({float(p_loss.detach())}, {float(v_loss.detach())}); parameters restored")
            opt.zero_grad()
            loss.backward()
            if not update_policy:
                for p in policy.policy_parameters():
                    p.grad = None
            if hyper.max_grad_norm:
                torch.nn.utils.clip_grad_norm_(policy.parameters(), hyper.max_grad_norm)
            opt.step()
            pl_acc += float(p_loss.detach())
            vl_acc += float(v_loss.detach())
            count += 1
    with torch.no_grad():
        lr = policy.log_prob(obs, act) - old_lp
        kl = float(((torch.exp(lr) - 1) - lr).mean())
        clip_frac = float((torch.abs(torch.exp(lr) - 1) > hyper.clip).double().mean())
    if not all(torch.isfinite(p).all() for p in policy.parameters()):
        policy.load_state_dict(backup)
        opt.load_state_dict(opt_backup)
        raise PPODiverged("non-finite parameters after PPO update; parameters restored")
    return UpdateStats(pl_acc / count, vl_acc / count, kl, clip_frac, first_dev)
