"""Gaussian policy with fixed diagonal covariance and a separate value net."""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

DTYPE = torch.float64
CHECKPOINT_VERSION = 1
LOG_2PI = math.log(2 * math.pi)


class PolicyError(ValueError):
    pass


def _mlp(sizes: Sequence[int], out_scale: float = 1.0) -> nn.Sequential:
    layers = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(nn.Tanh())
    with torch.no_grad():
        layers[-1].weight.mul_(out_scale)
        layers[-1].bias.zero_()
    return nn.Sequential(*layers)


class PolicyParams(nn.Module):
    """Mean MLP, value MLP, fixed log-std and an observation normalizer.

    The normalizer statistics are buffers; they change only between updates,
    never inside a rollout batch.
    """

    def __init__(self, obs_dim: int, act_dim: int, hidden: Sequence[int] = (512, 256),
                 log_std: float = -1.0, value_hidden: Optional[Sequence[int]] = None):
        super().__init__()
        hidden = tuple(int(h) for h in hidden)
        value_hidden = hidden if value_hidden is None else tuple(int(h) for h in value_hidden)
        self.sizes = {"obs_dim": int(obs_dim), "act_dim": int(act_dim), "hidden": list(hidden),
                      "value_hidden": list(value_hidden)}
        self.mean_net = _mlp((obs_dim, *hidden, act_dim), out_scale=0.01)
        self.value_net = _mlp((obs_dim, *value_hidden, 1))
        self.register_buffer("log_std", torch.full((act_dim,), float(log_std)))
        self.register_buffer("obs_mean", torch.zeros(obs_dim))
        self.register_buffer("obs_var", torch.ones(obs_dim))
        self.register_buffer("obs_count", torch.zeros(()))
        self.to(DTYPE)

    def normalize(self, obs: torch.Tensor) -> torch.Tensor:
        return torch.clamp((obs - self.obs_mean) / torch.sqrt(self.obs_var + 1e-8), -10.0, 10.0)

    def mean(self, obs: torch.Tensor) -> torch.Tensor:
        return self.mean_net(self.normalize(obs))

    def value(self, obs: torch.Tensor) -> torch.Tensor:
        return self.value_net(self.normalize(obs)).squeeze(-1)

    def log_prob(self, obs: torch.Tensor, act: torch.Tensor) -> torch.Tensor:
        return gaussian_log_prob(act, self.mean(obs), self.log_std)

    def policy_parameters(self):
        return self.mean_net.parameters()

    def value_parameters(self):
        return self.value_net.parameters()

    def update_normalizer(self, obs: np.ndarray):
        """Merge a batch into the running mean/variance (parallel algorithm)."""
        x = torch.as_tensor(np.asarray(obs, float), dtype=DTYPE)
        n = x.shape[0]
        if n == 0:
            return
        m, v = x.mean(0), x.var(0, unbiased=False)
        c = self.obs_count
        tot = c + n
        delta = m - self.obs_mean
        with torch.no_grad():
            if float(c) == 0:
                self.obs_mean.copy_(m)
                self.obs_var.copy_(v)
            else:
                self.obs_mean.add_(delta * n / tot)
                self.obs_var.copy_((self.obs_var * c + v * n + delta ** 2 * c * n / tot) / tot)
            self.obs_count.fill_(float(tot))


def gaussian_log_prob(x: torch.Tensor, mu: torch.Tensor, log_std: torch.Tensor) -> torch.Tensor:
    """Diagonal Gaussian log density summed over the last axis."""
    z = (x - mu) * torch.exp(-log_std)
    return (-0.5 * z * z - log_std - 0.5 * LOG_2PI).sum(-1)


def init_policy(obs_dim: int, act_dim: int, hidden: Sequence[int] = (512, 256), log_std: float = -1.0,
                seed: int = 0, value_hidden: Optional[Sequence[int]] = None) -> PolicyParams:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return PolicyParams(obs_dim, act_dim, hidden, log_std, value_hidden)


def sample_action(policy: PolicyParams, obs, stochastic: bool = True,
                  rng: Optional[np.random.Generator] = None) -> tuple:
    """(action, log_prob, mean) for one observation vector, or arrays of
    them for a (B, obs_dim) batch."""
    x = torch.as_tensor(np.asarray(obs, float), dtype=DTYPE)
    with torch.no_grad():
        mu = policy.mean(x)
        std = torch.exp(policy.log_std)
        if stochastic:
            rng = rng if rng is not None else np.random.default_rng()
            eps = torch.as_tensor(rng.standard_normal(mu.shape), dtype=DTYPE)
            a = mu + std * eps
        else:
            a = mu.clone()
        lp = gaussian_log_prob(a, mu, policy.log_std)
    return a.numpy(), (float(lp) if lp.ndim == 0 else lp.numpy()), mu.numpy()


def policy_mean(policy: PolicyParams, obs) -> np.ndarray:
    with torch.no_grad():
        return policy.mean(torch.as_tensor(np.asarray(obs, float), dtype=DTYPE)).numpy()


def clone_policy(policy: PolicyParams) -> PolicyParams:
    s = policy.sizes
    out = PolicyParams(s["obs_dim"], s["act_dim"], s["hidden"], 0.0, s["value_hidden"])
    out.load_state_dict(policy.state_dict())
    return out


def _tensors(sd: dict) -> dict:
    return {k: {"shape": list(v.shape), "data": v.detach().reshape(-1).tolist()} for k, v in sd.items()}


def save_policy(policy: PolicyParams, path, iteration: int = 0, optimizer: Optional[dict] = None) -> Path:
    """Versioned JSON checkpoint of parameters, iteration and optimizer state."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"version": CHECKPOINT_VERSION, "kind": "policy", "sizes": policy.sizes, "iteration": int(iteration),
           "tensors": _tensors(policy.state_dict())}
    if optimizer is not None:
        doc["optimizer"] = optimizer
    path.write_text(json.dumps(doc, sort_keys=True) + "\n")
    return path


def load_policy(path) -> tuple:
    """(policy, iteration, optimizer-state-or-None)."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise PolicyError(f"cannot read checkpoint {path}: {e}") from None
    if doc.get("version") != CHECKPOINT_VERSION or doc.get("kind") != "policy":
        raise PolicyError(f"{path}: unsupported checkpoint version/kind")
    s = doc["sizes"]
    policy = PolicyParams(s["obs_dim"], s["act_dim"], s["hidden"], 0.0, s["value_hidden"])
    state = {k: torch.tensor(t["data"], dtype=DTYPE).reshape(t["shape"]) for k, t in doc["tensors"].items()}
    policy.load_state_dict(state)
    return policy, int(doc.get("iteration", 0)), doc.get("optimizer")


def optimizer_state(opt: torch.optim.Optimizer) -> dict:
    """JSON-friendly Adam state."""
    sd = opt.state_dict()
    state = {}
    for k, v in sd["state"].items():
        state[str(k)] = {n: ({"shape": list(t.shape), "data": t.reshape(-1).tolist()} if torch.is_tensor(t) else t)
                         for n, t in v.items()}
    return {"state": state, "param_groups": sd["param_groups"]}


def load_optimizer_state(opt: torch.optim.Optimizer, doc: dict):
    state = {}
    for k, v in doc["state"].items():
        state[int(k)] = {n: (torch.tensor(t["data"], dtype=DTYPE if n != "step" else torch.float32)
                             .reshape(t["shape"]) if isinstance(t, dict) else t) for n, t in v.items()}
    opt.load_state_dict({"state": state, "param_groups": doc["param_groups"]})
