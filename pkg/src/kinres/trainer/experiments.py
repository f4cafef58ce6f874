"""Desk-scale experiments: pendulum imitation, residual-vs-direct actions and
head-drift fine-tuning.  Each returns plain dicts so scripts and tests can
print or assert on them."""
from __future__ import annotations

import math
from dataclasses import replace
from typing import Sequence

import numpy as np

from kinres.core.types import Frame, MotionClip, Pose
from kinres.datagen import DriftModel, ScenarioSpec, derive_head_trajectory, generate_episode, synthesize_features
from kinres.metrics import a_accel
from kinres.rewards import pose_reward
from kinres.sim.model import load_model
from kinres.trainer.env import ImitationEnv, evaluate, episode_clip, episode_seed, run_episode
from kinres.trainer.loop import TrainHyper, finetune, train_policy
from kinres.trainer.policy import PolicyParams, clone_policy, init_policy
from kinres.trainer.ppo import PPOHyper
from kinres.trainer.toy import pendulum_envs


# ---- pendulum ----------------------------------------------------------------

PENDULUM_HYPER = TrainHyper(iterations=200, steps_per_iter=480, ppo=PPOHyper(minibatch=120), seed=0)


def run_pendulum(hyper: TrainHyper = PENDULUM_HYPER, target: float = 0.9, stop_at_target: bool = True,
                 log=None) -> dict:
    """Train on the sinusoid until the deterministic mean r_p reaches
    ``target`` or the iteration budget runs out."""
    envs = pendulum_envs()
    policy = init_policy(envs[0].obs_dim, envs[0].act_dim, hyper.hidden, hyper.log_std, hyper.seed)
    start = evaluate(envs, policy)["mean_r_p"]
    hist = []

    def cb(it, pol, row):
        rp = evaluate(envs, pol)["mean_r_p"]
        hist.append(rp)
        if log:
            log(f"iter {it} r_p {rp:.4f}")
        return stop_at_target and rp >= target

    out = train_policy(envs, hyper, policy, callback=cb)
    reached = next((i + 1 for i, v in enumerate(hist) if v >= target), None)
    return {"initial_r_p": start, "final_r_p": hist[-1] if hist else start, "iterations": out.iteration,
            "reached_at": reached, "history": hist, "policy": out.policy}


# ---- residual vs direct --------------------------------------------------------

ABLATION_HYPER = TrainHyper(iterations=10, steps_per_iter=2048, log_std=-1.0,
                            ppo=PPOHyper(minibatch=256, lr=3e-4, target_kl=0.05))


def sit_task(model, mode: str, clip_seeds=(0, 1, 2), random_start: bool = True, duration: float = 6.0) -> tuple:
    """(training envs, evaluation envs) on the standing-then-sitting clips."""
    train, ev = [], []
    for s in clip_seeds:
        clip, scene = generate_episode(ScenarioSpec("sit", s, duration=duration), model)
        ctx = synthesize_features(clip, s)
        train.append(ImitationEnv(model, clip, scene, mode=mode, context=ctx, random_start=random_start))
        ev.append(ImitationEnv(model, clip, scene, mode=mode, context=ctx))
    return train, ev


def rollout_accel(envs: Sequence[ImitationEnv], policy: PolicyParams) -> float:
    """Mean A_accel of deterministic rollouts (episodes end at a fall)."""
    vals = []
    for i, env in enumerate(envs):
        ep = run_episode(env, policy, episode_seed(0, 0, i), stochastic=False, keep_info=True)
        clip = episode_clip(env, ep)
        vals.append(a_accel(clip) if len(clip) >= 3 else math.inf)
    return float(np.mean(vals))


def run_ablation_arm(mode: str, seed: int, hyper: TrainHyper = ABLATION_HYPER, threshold: float = 0.8,
                     model=None, log=None) -> dict:
    """Iterations until the deterministic mean reward reaches ``threshold``
    (0 when the untrained policy already does) and the final A_accel."""
    model = model if model is not None else load_model()
    train, ev = sit_task(model, mode)
    hyper = replace(hyper, seed=seed)
    policy = init_policy(train[0].obs_dim, train[0].act_dim, hyper.hidden, hyper.log_std, seed)
    rewards = [evaluate(ev, policy)["mean_reward"]]

    def cb(it, pol, row):
        rewards.append(evaluate(ev, pol)["mean_reward"])
        if log:
            log(f"{mode} seed {seed} iter {it} reward {rewards[-1]:.4f}")
        return False

    train_policy(train, hyper, policy, callback=cb)
    hit = next((i for i, r in enumerate(rewards) if r >= threshold), None)
    return {"mode": mode, "seed": seed, "iters_to_threshold": hit, "rewards": rewards,
            "a_accel": rollout_accel(ev, policy)}


def run_ablation(seeds=(0, 1, 2), hyper: TrainHyper = ABLATION_HYPER, threshold: float = 0.8, log=None) -> list:
    model = load_model()
    out = []
    for s in seeds:
        arms = {m: run_ablation_arm(m, s, hyper, threshold, model, log) for m in ("residual", "direct")}
        out.append(arms)
    return out


def ablation_verdict(results: list) -> dict:
    """Per seed: residual reaches the threshold strictly earlier (never
    reaching counts as infinitely late) and ends with lower A_accel."""
    inf = math.inf
    faster, smoother = [], []
    for arms in results:
        r, d = arms["residual"], arms["direct"]
        ri = inf if r["iters_to_threshold"] is None else r["iters_to_threshold"]
        di = inf if d["iters_to_threshold"] is None else d["iters_to_threshold"]
        faster.append(ri < di)
        smoother.append(r["a_accel"] < d["a_accel"])
    return {"faster": faster, "smoother": smoother, "pass": all(faster) and all(smoother)}


# ---- drift correction ----------------------------------------------------------

DRIFT_HYPER = TrainHyper(iterations=20, steps_per_iter=2048, log_std=-2.3,
                         ppo=PPOHyper(minibatch=256, lr=5e-5, target_kl=0.02))


def standing_reference(model, n_frames: int = 121, frame_rate: float = 30.0) -> MotionClip:
    from kinres.core.quat import UnitQuaternion
    from kinres.core.types import finite_difference_velocities
    from kinres.datagen import attach_heads
    f = Frame(Pose(np.array([0.0, 0.0, model.root_height]), UnitQuaternion(), np.zeros(model.dof)))
    clip = MotionClip(frame_rate, [f] * n_frames, "other", model.joint_names, (), "stand")
    return attach_heads(finite_difference_velocities(clip), model)


def drift_scores(env: ImitationEnv, policy: PolicyParams, heads: Sequence) -> dict:
    """Mean head-position error to ``heads`` and mean kinematic pose reward
    of a deterministic rollout."""
    ep = run_episode(env, policy, episode_seed(0, 0, 0), stochastic=False, keep_info=True)
    err, rp = [], []
    for inf in ep.info:
        if "head" not in inf:
            continue
        t = inf["t"]
        err.append(float(np.linalg.norm(inf["head"].h_pos - heads[t].h_pos)))
        rp.append(pose_reward(inf["pose"], env.kin_refs[t], env.model))
    return {"head_error": float(np.mean(err)), "r_p_kin": float(np.mean(rp)), "length": len(ep)}


def run_drift(offset: float = 0.3, hyper: TrainHyper = DRIFT_HYPER, seed: int = 0, policy=None, ref=None,
              scene=None, context=None, log=None) -> dict:
    """Fine-tune a policy (zero residual by default) toward a laterally
    offset head trajectory of ``ref`` (standing by default)."""
    model = load_model()
    ref = ref if ref is not None else standing_reference(model)
    env = ImitationEnv(model, ref, scene, context=context)
    if policy is None:
        policy = init_policy(env.obs_dim, env.act_dim, hyper.hidden, hyper.log_std, seed)
    heads = derive_head_trajectory(ref, DriftModel(offset=(0.0, offset, 0.0)))
    before = drift_scores(env, policy, heads)
    frozen = clone_policy(policy)
    tuned = clone_policy(policy)

    def cb(it, pol, row):
        if log:
            s = drift_scores(env, pol, heads)
            log(f"iter {it} head_error {s['head_error']:.4f} r_p' {s['r_p_kin']:.4f} len {s['length']}")
        return False

    finetune(tuned, frozen, [env], heads, replace(hyper, seed=seed), callback=cb if log else None)
    after = drift_scores(env, tuned, heads)
    return {"before": before, "after": after,
            "error_reduction": 1.0 - after["head_error"] / before["head_error"],
            "r_p_degradation": 1.0 - after["r_p_kin"] / before["r_p_kin"]}
