import csv
import json

import numpy as np
import pytest

from kinres.cli import main
from kinres.core.clip_io import load_clip
from kinres.core.types import MotionClip, Pose, Frame


def run(*argv):
    return main(["--quiet", *map(str, argv)])


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert run("gen-data", "--action", "sit", "--count", 2, "--seed", 3, "--out", out,
               "--drift-offset", 0, 0.3, 0) == 0
    return out


@pytest.fixture(scope="module")
def policy(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("pol")
    assert run("train-policy", "--dataset", dataset, "--iterations", 0, "--set", "policy.hidden=[16]",
               "--out", out) == 0
    return out / "policy.json"


def test_gen_data_layout_and_determinism(dataset, tmp_path):
    m = json.loads((dataset / "manifest.json").read_text())
    assert [(e["id"], e["split"]) for e in m["clips"]] == [("sit_000", "train"), ("sit_001", "test")]
    assert (dataset / "heads" / "sit_000.csv").exists()
    assert run("gen-data", "--action", "sit", "--count", 2, "--seed", 3, "--out", tmp_path,
               "--drift-offset", 0, 0.3, 0) == 0
    for rel in ["manifest.json", "clips/sit_001.jsonl", "heads/sit_001.csv", "features/sit_001.npy"]:
        assert (dataset / rel).read_bytes() == (tmp_path / rel).read_bytes()


def test_usage_errors_exit_1(tmp_path, capsys):
    assert run("train-regressor", "--dataset", tmp_path / "missing", "--out", tmp_path) == 1
    assert "missing" in capsys.readouterr().err
    assert run("no-such-command") == 1
    assert run("gen-data", "--bogus", "--out", tmp_path) == 1
    assert run("gen-data", "--out", tmp_path, "--set", "ppo.nope=1") == 1


def test_train_regressor_deterministic(dataset, tmp_path):
    for d in ("a", "b"):
        assert run("train-regressor", "--dataset", dataset, "--steps", 15, "--set", "regressor.hidden=8",
                   "--set", "regressor.mlp=[8]", "--out", tmp_path / d) == 0
    a, b = rows(tmp_path / "a" / "regressor_loss.csv"), rows(tmp_path / "b" / "regressor_loss.csv")
    assert len(a) == 15 and (tmp_path / "a" / "regressor.json").exists()
    assert abs(float(a[-1]["loss"]) - float(b[-1]["loss"])) <= 1e-9


def test_train_policy_toy_and_resume(tmp_path):
    args = ["train-policy", "--toy", "pendulum", "--steps-per-iter", 64, "--set", "ppo.minibatch=32",
            "--set", "policy.hidden=[8]", "--out", tmp_path]
    assert run(*args, "--iterations", 5) == 0
    curve = rows(tmp_path / "training_curve.csv")
    assert [r["iteration"] for r in curve] == ["1", "2", "3", "4", "5"]
    assert run(*args, "--iterations", 2, "--resume", tmp_path / "policy.json") == 0
    curve = rows(tmp_path / "training_curve.csv")
    assert [r["iteration"] for r in curve][-3:] == ["5", "6", "7"]
    assert json.loads((tmp_path / "policy.json").read_text())["iteration"] == 7


def test_divergence_exits_2(tmp_path, monkeypatch):
    from kinres import cli
    from kinres.trainer.ppo import PPODiverged

    def boom(*a, **k):
        raise PPODiverged("nan")
    monkeypatch.setattr(cli, "train_policy", boom)
    assert run("train-policy", "--toy", "pendulum", "--iterations", 1, "--out", tmp_path) == 2


def test_finetune_zero_iterations_and_missing_file(dataset, policy, tmp_path):
    heads = dataset / "heads" / "sit_001.csv"
    assert run("finetune", "--dataset", dataset, "--clip", "sit_001", "--policy", policy, "--heads", heads,
               "--iterations", 0, "--out", tmp_path) == 0
    assert (tmp_path / "finetuned.json").read_bytes() == policy.read_bytes()
    assert run("finetune", "--dataset", dataset, "--clip", "sit_001", "--policy", policy,
               "--heads", tmp_path / "none.csv", "--out", tmp_path) == 1


def test_finetune_updates(dataset, policy, tmp_path):
    assert run("finetune", "--dataset", dataset, "--clip", "sit_001", "--policy", policy,
               "--heads", dataset / "heads" / "sit_001.csv", "--iterations", 1, "--steps-per-iter", 32,
               "--set", "ppo.minibatch=16", "--out", tmp_path) == 0
    assert (tmp_path / "finetuned.json").read_bytes() != policy.read_bytes()
    assert len(rows(tmp_path / "finetune_curve.csv")) == 1


def test_rollout_exports(dataset, policy, tmp_path):
    for d in ("a", "b"):
        assert run("rollout", "--dataset", dataset, "--policy", policy, "--out", tmp_path / d) == 0
    for f in ("sit_001.jsonl", "sit_001_ref.jsonl", "sit_001_breakdown.csv", "sit_001_joints.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    gen = load_clip(tmp_path / "a" / "sit_001.jsonl")
    ref = load_clip(tmp_path / "a" / "sit_001_ref.jsonl")
    assert len(gen) == len(ref) >= 2
    br = rows(tmp_path / "a" / "sit_001_breakdown.csv")
    assert len(br) == len(gen) - 1
    for r in br:
        names = [k[2:] for k in r if k.startswith("w_")]
        total = sum(float(r["w_" + n]) * float(r[n]) for n in names)
        assert abs(total - float(r["total"])) <= 1e-12
    joints = rows(tmp_path / "a" / "sit_001_joints.csv")
    assert len(joints) == len(gen)


def _shift(clip, dx):
    frames = [Frame(Pose(f.pose.root_pos + np.array([dx, 0, 0]), f.pose.root_rot, f.pose.joint_angles))
              for f in clip.frames]
    return MotionClip(clip.frame_rate, frames, clip.action_label, clip.joint_names, (), clip.name)


def test_eval_closed_form_and_mismatch(dataset, tmp_path, capsys):
    from kinres.core.clip_io import save_clip
    ref = load_clip(dataset / "clips" / "sit_000.jsonl")
    save_clip(_shift(ref, 0.0), tmp_path / "ref.jsonl")
    save_clip(_shift(ref, 0.1), tmp_path / "gen.jsonl")
    assert run("eval", "--gen", tmp_path / "gen.jsonl", "--ref", tmp_path / "ref.jsonl", "--out", tmp_path) == 0
    (r,) = rows(tmp_path / "metrics.csv")
    assert abs(float(r["e_root"]) - 0.1) < 1e-9
    assert float(r["e_joint"]) == 0.0 and float(r["e_vel"]) == 0.0
    short = MotionClip(ref.frame_rate, ref.frames[:10], ref.action_label, ref.joint_names, (), "short")
    save_clip(short, tmp_path / "short.jsonl")
    assert run("eval", "--gen", tmp_path / "short.jsonl", "--ref", tmp_path / "ref.jsonl", "--out", tmp_path) == 1
    assert "short" in capsys.readouterr().err


def test_eval_by_dataset_name(dataset, tmp_path):
    assert run("eval", "--gen", dataset / "clips" / "sit_000.jsonl", "--dataset", dataset, "--out", tmp_path) == 0
    (r,) = rows(tmp_path / "metrics.csv")
    assert float(r["e_root"]) == 0.0 and float(r["e_mpjpe"]) == 0.0
