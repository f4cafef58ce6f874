"""Command-line entry point: ``kinres <command> [flags]``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime divergence.
Every artifact is written under ``--out``.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from kinres.config import ConfigError, GlobalConfig, load_config
from kinres.core.clip_io import load_clip, save_clip
from kinres.core.types import ClipError, MotionClip
from kinres.datagen import (ACTIONS, DriftModel, FeatureSequence, ScenarioError, derive_head_trajectory,
                            generate_dataset, load_entry, load_heads, load_manifest, save_heads, select,
                            synthesize_features)
from kinres.metrics import MetricError, emit_report, evaluate_pair, joint_positions
from kinres.regressor import (RegressorDiverged, RegressorError, clip_targets, load_params, regress,
                              save_params, train_regressor)
from kinres.sim.model import ModelError, load_model
from kinres.sim.scene import Scene, SceneError, load_scene
from kinres.sim.simulator import SimulationDiverged
from kinres.trainer.env import EnvError, ImitationEnv, episode_clip, episode_seed, run_episode
from kinres.trainer.loop import TrainHyper, finetune, train_policy, write_curve
from kinres.trainer.mdp import OBJECT_BLOCK, MdpError
from kinres.trainer.policy import PolicyError, clone_policy, load_policy, save_policy
from kinres.trainer.ppo import PPODiverged
from kinres.trainer.toy import pendulum_envs

log = logging.getLogger("kinres")

USAGE_ERRORS = (ConfigError, ScenarioError, RegressorError, PolicyError, MetricError, ClipError, EnvError,
                MdpError, ModelError, SceneError, OSError, ValueError)
DIVERGENCE = (PPODiverged, RegressorDiverged, SimulationDiverged)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _fmt(v) -> str:
    return repr(int(v)) if isinstance(v, (int, np.integer)) else repr(float(v))


def _write_rows(path: Path, header: Sequence[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)
    return path


def _config(args) -> GlobalConfig:
    over = {}
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        import yaml
        k, v = item.split("=", 1)
        over[k.strip()] = yaml.safe_load(v)
    return load_config(args.config, over)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _model(cfg: GlobalConfig, name: Optional[str] = None):
    return load_model(name if name is not None else cfg.paths.model)


def _manifest(args, cfg: GlobalConfig) -> dict:
    path = args.dataset or cfg.paths.dataset
    if path is None:
        raise ConfigError("no dataset given (--dataset or paths.dataset)")
    if not Path(path).exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    return load_manifest(path)


def _n_objects(policy, dof: int, context_dim: int) -> int:
    rest = policy.sizes["obs_dim"] - (2 * dof + 11) - (dof + 7) - context_dim
    if rest < 0 or rest % OBJECT_BLOCK:
        raise PolicyError(f"policy observation size {policy.sizes['obs_dim']} does not fit this model and context")
    return rest // OBJECT_BLOCK


def _reference(args, cfg: GlobalConfig, model) -> tuple:
    """(clip, scene, features) from --clip-file or from --dataset/--clip."""
    if getattr(args, "clip_file", None):
        clip = load_clip(args.clip_file)
        scene = load_scene(args.scene_file) if args.scene_file else Scene()
        if args.features_file:
            feats = FeatureSequence(np.load(args.features_file))
        else:
            feats = synthesize_features(clip, seed=cfg.seeds.data)
        return clip, scene, feats
    m = _manifest(args, cfg)
    entries = [e for e in m["clips"] if e["id"] == args.clip] if args.clip else select(m, "test", args.action)
    if not entries:
        raise ConfigError(f"no clip {args.clip or args.action or ''!s} in dataset {m['root']}")
    return load_entry(m, entries[0])


# ---- commands ------------------------------------------------------------------

def cmd_gen_data(args, cfg: GlobalConfig) -> int:
    out = _out(args)
    actions = tuple(args.action) if args.action else ACTIONS
    model = _model(cfg)
    seed = cfg.seeds.data if args.seed is None else args.seed
    manifest = generate_dataset(out, args.count, args.split, seed, actions, args.duration, model)
    drift = DriftModel(pos_noise=args.drift_noise, bias_rate=tuple(args.drift_bias), offset=tuple(args.drift_offset),
                       seed=seed)
    for e in manifest["clips"]:
        clip = load_clip(out / e["clip"])
        save_heads(derive_head_trajectory(clip, drift), out / "heads" / f"{e['id']}.csv")
    log.info("wrote %d clips to %s", len(manifest["clips"]), out)
    return 0


def cmd_train_regressor(args, cfg: GlobalConfig) -> int:
    out = _out(args)
    m = _manifest(args, cfg)
    entries = select(m, "train", args.action)
    if not entries:
        raise ConfigError("dataset has no training clips for this selection")
    data = []
    for e in entries:
        clip, _, feats = load_entry(m, e)
        data.append((feats, clip_targets(clip)))
    hyper = cfg.regressor
    hyper = replace(hyper, seed=cfg.seeds.regressor if args.seed is None else args.seed)
    if args.steps is not None:
        hyper = replace(hyper, steps=args.steps)
    res = train_regressor(data, hyper)
    save_params(res.params, out / "regressor.json")
    _write_rows(out / "regressor_loss.csv", ("step", "loss"), ((i, _fmt(l)) for i, l in enumerate(res.losses)))
    log.info("final loss %.6g", res.losses[-1] if res.losses else float("nan"))
    return 0


def _policy_envs(args, cfg: GlobalConfig, mode: str) -> list:
    if args.toy == "pendulum":
        return pendulum_envs(mode=mode)
    m = _manifest(args, cfg)
    model = _model(cfg)
    entries = select(m, "train", args.action)
    if args.clips:
        entries = entries[:args.clips]
    if not entries:
        raise ConfigError("dataset has no training clips for this selection")
    loaded = [load_entry(m, e) for e in entries]
    k = max(len(s.object_ids) for _, s, _ in loaded)
    return [ImitationEnv(model, c, s, cfg.sim, cfg.rewards, mode, f, random_start=cfg.policy.random_start,
                         max_objects=k) for c, s, f in loaded]


def cmd_train_policy(args, cfg: GlobalConfig) -> int:
    out = _out(args)
    pc = cfg.policy
    mode = args.mode or pc.mode
    envs = _policy_envs(args, cfg, mode)
    hyper = TrainHyper(args.iterations if args.iterations is not None else pc.iterations,
                       args.steps_per_iter or pc.steps_per_iter, cfg.ppo, pc.hidden, pc.log_std,
                       cfg.seeds.policy if args.seed is None else args.seed,
                       args.workers if args.workers is not None else pc.workers, pc.value_warmup)
    policy, start, opt = None, 0, None
    if args.resume:
        policy, start, opt = load_policy(args.resume)
    res = train_policy(envs, hyper, policy, start, opt, log=log.info)
    save_policy(res.policy, out / "policy.json", res.iteration, res.optimizer)
    write_curve(res.curve, out / "training_curve.csv", append=bool(args.resume))
    return 0


def cmd_finetune(args, cfg: GlobalConfig) -> int:
    out = _out(args)
    if not Path(args.heads).exists():
        raise FileNotFoundError(f"head trajectory not found: {args.heads}")
    heads = load_heads(args.heads)
    policy, it, opt = load_policy(args.policy)
    model = _model(cfg)
    clip, scene, feats = _reference(args, cfg, model)
    k = _n_objects(policy, model.dof, feats.dim)
    env = ImitationEnv(model, clip, scene, cfg.sim, cfg.rewards, args.mode or cfg.policy.mode, feats,
                       max_objects=k)
    fc = cfg.finetune
    iters = fc.iterations if args.iterations is None else args.iterations
    hyper = TrainHyper(iters, args.steps_per_iter or fc.steps_per_iter,
                       replace(cfg.ppo, lr=fc.lr, target_kl=fc.target_kl), policy.sizes["hidden"],
                       seed=cfg.seeds.policy if args.seed is None else args.seed,
                       workers=args.workers if args.workers is not None else cfg.policy.workers)
    frozen = clone_policy(policy)
    res = finetune(policy, frozen, [env], heads, hyper, log=log.info)
    if iters == 0:
        save_policy(policy, out / "finetuned.json", it, opt)
    else:
        save_policy(res.policy, out / "finetuned.json", it + res.iteration, res.optimizer)
        write_curve(res.curve, out / "finetune_curve.csv")
    return 0


def _breakdown_rows(ep) -> tuple:
    first = next(inf["breakdown"] for inf in ep.info if "breakdown" in inf)
    names = list(first.components)
    header = ["t", "total", *names, *(f"w_{n}" for n in names)]
    if first.lam is not None:
        header.append("lambda")
    rows = []
    for inf in ep.info:
        br = inf.get("breakdown")
        if br is None:
            continue
        row = [str(inf["t"]), _fmt(br.total), *(_fmt(br.components[n]) for n in names),
               *(_fmt(br.weights[n]) for n in names)]
        if br.lam is not None:
            row.append(_fmt(br.lam))
        rows.append(row)
    return header, rows


def cmd_rollout(args, cfg: GlobalConfig) -> int:
    out = _out(args)
    policy, _, _ = load_policy(args.policy)
    model = _model(cfg)
    clip, scene, feats = _reference(args, cfg, model)
    kw = {}
    if args.regressor:
        states = regress(load_params(args.regressor), feats, model.dof)
        kw = {"init": "test", "kin_states": states, "kin_refs": [s.to_pose(model) for s in states]}
    env = ImitationEnv(model, clip, scene, cfg.sim, cfg.rewards, args.mode or cfg.policy.mode, feats,
                       max_objects=_n_objects(policy, model.dof, feats.dim), **kw)
    seed = cfg.seeds.policy if args.seed is None else args.seed
    ep = run_episode(env, policy, episode_seed(seed, 0, 0), stochastic=args.stochastic, keep_info=True)
    if any(inf.get("diverged") for inf in ep.info):
        raise SimulationDiverged(f"simulation diverged during rollout of {clip.name}")
    name = clip.name or "rollout"
    gen = episode_clip(env, ep, name)
    ref = MotionClip(clip.frame_rate, clip.frames[env.t0:env.t0 + len(gen)], clip.action_label,
                     clip.joint_names, clip.object_ids, name)
    save_clip(gen, out / f"{name}.jsonl")
    save_clip(ref, out / f"{name}_ref.jsonl")
    header, rows = _breakdown_rows(ep)
    _write_rows(out / f"{name}_breakdown.csv", header, rows)
    pos = joint_positions(gen, model, model.mpjpe_sites or model.site_names)
    sites = model.mpjpe_sites or model.site_names
    _write_rows(out / f"{name}_joints.csv", ["t", *(f"{s}_{a}" for s in sites for a in "xyz")],
                ([str(t), *(_fmt(v) for v in pos[t].reshape(-1))] for t in range(len(gen))))
    log.info("%s: %d steps, mean reward %.4f", name, len(ep), float(np.mean(ep.rewards)) if len(ep) else 0.0)
    return 0


def cmd_eval(args, cfg: GlobalConfig) -> int:
    out = _out(args)
    gens = [load_clip(p) for p in args.gen]
    if args.ref:
        if len(args.ref) != len(args.gen):
            raise ConfigError(f"{len(args.gen)} generated clips but {len(args.ref)} references")
        refs = [load_clip(p) for p in args.ref]
    else:
        m = _manifest(args, cfg)
        by_id = {e["id"]: e for e in m["clips"]}
        refs = []
        for g in gens:
            if g.name not in by_id:
                raise ConfigError(f"no reference clip named {g.name!r} in dataset")
            refs.append(load_entry(m, by_id[g.name])[0])
    model = _model(cfg)
    reports = [evaluate_pair(g, r, model, args.unit_mode) for g, r in zip(gens, refs)]
    if not args.per_clip:
        from kinres.metrics import aggregate
        reports = aggregate(reports)
    emit_report(reports, out / "metrics.csv")
    return 0


# ---- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kinres", description=__doc__.splitlines()[0])
    p.add_argument("--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int)
        return sp

    def reference(sp):
        sp.add_argument("--dataset", help="dataset directory or manifest")
        sp.add_argument("--clip", help="clip id in the dataset")
        sp.add_argument("--action", choices=ACTIONS)
        sp.add_argument("--clip-file")
        sp.add_argument("--scene-file")
        sp.add_argument("--features-file")
        sp.add_argument("--mode", choices=("residual", "direct"))

    g = common(sub.add_parser("gen-data", help="generate a synthetic dataset"))
    g.add_argument("--action", action="append", choices=ACTIONS)
    g.add_argument("--count", type=int, default=10, help="clips per action")
    g.add_argument("--split", type=float, default=0.8)
    g.add_argument("--duration", type=float, default=6.0)
    g.add_argument("--drift-offset", type=float, nargs=3, default=(0.0, 0.0, 0.0))
    g.add_argument("--drift-bias", type=float, nargs=3, default=(0.0, 0.0, 0.0))
    g.add_argument("--drift-noise", type=float, default=0.0)
    g.set_defaults(func=cmd_gen_data)

    r = common(sub.add_parser("train-regressor", help="fit the kinematic regressor"))
    r.add_argument("--dataset")
    r.add_argument("--action", choices=ACTIONS)
    r.add_argument("--steps", type=int)
    r.set_defaults(func=cmd_train_regressor)

    t = common(sub.add_parser("train-policy", help="PPO imitation training"))
    t.add_argument("--dataset")
    t.add_argument("--action", choices=ACTIONS)
    t.add_argument("--toy", choices=("pendulum",))
    t.add_argument("--clips", type=int, help="use only the first N training clips")
    t.add_argument("--iterations", type=int)
    t.add_argument("--steps-per-iter", type=int)
    t.add_argument("--workers", type=int)
    t.add_argument("--mode", choices=("residual", "direct"))
    t.add_argument("--resume", help="policy checkpoint to continue from")
    t.set_defaults(func=cmd_train_policy)

    f = common(sub.add_parser("finetune", help="fine-tune toward a head trajectory"))
    reference(f)
    f.add_argument("--policy", required=True)
    f.add_argument("--heads", required=True, help="head-trajectory CSV")
    f.add_argument("--iterations", type=int)
    f.add_argument("--steps-per-iter", type=int)
    f.add_argument("--workers", type=int)
    f.set_defaults(func=cmd_finetune)

    o = common(sub.add_parser("rollout", help="simulate a policy on one clip"))
    reference(o)
    o.add_argument("--policy", required=True)
    o.add_argument("--regressor", help="start from and track regressed kinematics")
    o.add_argument("--stochastic", action="store_true")
    o.set_defaults(func=cmd_rollout)

    e = common(sub.add_parser("eval", help="metric report for generated clips"))
    e.add_argument("--gen", nargs="+", required=True)
    e.add_argument("--ref", nargs="+")
    e.add_argument("--dataset")
    e.add_argument("--unit-mode", choices=("angular", "linear"), default="angular")
    e.add_argument("--per-clip", action="store_true")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"kinres: error: {e}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s",
                        stream=sys.stderr, force=True)
    try:
        cfg = _config(args)
        return args.func(args, cfg)
    except DIVERGENCE as e:
        print(f"kinres: diverged: {e}", file=sys.stderr)
        return 2
    except UsageError as e:
        print(f"kinres: error: {e}", file=sys.stderr)
        return 1
    except USAGE_ERRORS as e:
        print(f"kinres: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
