import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from kinres.core.quat import UnitQuaternion
from kinres.datagen import FeatureSequence, ScenarioSpec, generate_clip, synthesize_features
from kinres.regressor import (KinematicState, RegressorDiverged, RegressorError, RegressorHyper, clip_targets,
                              complete_height, grad, init_params, load_params, mse_loss, regress, regress_raw,
                              save_params, train_regressor)

from oracles import fd_check


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def unrolled_oracle(params, x):
    """Loop-by-loop GRU and MLP evaluation from the raw weights."""
    sd = {k: v.numpy() for k, v in params.state_dict().items()}
    h_dim = params.sizes["hidden"]
    x = (x - sd["in_mean"]) / sd["in_std"]
    w_ih, w_hh, b_ih, b_hh = sd["gru.weight_ih"], sd["gru.weight_hh"], sd["gru.bias_ih"], sd["gru.bias_hh"]
    h = np.zeros(h_dim)
    out = []
    for xt in x:
        gi = w_ih @ xt + b_ih
        gh = w_hh @ h + b_hh
        r = _sigmoid(gi[:h_dim] + gh[:h_dim])
        z = _sigmoid(gi[h_dim:2 * h_dim] + gh[h_dim:2 * h_dim])
        n = np.tanh(gi[2 * h_dim:] + r * gh[2 * h_dim:])
        h = (1 - z) * n + z * h
        a = h
        n_lin = len(params.sizes["mlp"]) + 1
        for i in range(n_lin):
            a = sd[f"decoder.{2 * i}.weight"] @ a + sd[f"decoder.{2 * i}.bias"]
            if i < n_lin - 1:
                a = np.tanh(a)
        out.append(a)
    return np.array(out)


def tiny(seed=0):
    p = init_params(3, 4, hidden=4, mlp=(6,), seed=seed)
    with torch.no_grad():
        p.in_mean.copy_(torch.tensor([0.1, -0.2, 0.3]))
        p.in_std.copy_(torch.tensor([1.5, 0.5, 2.0]))
    return p


def test_tiny_instance_size():
    assert sum(p.numel() for p in tiny().parameters()) <= 1000


def test_matches_unrolled_oracle(rng):
    p = tiny()
    x = rng.standard_normal((12, 3))
    assert np.allclose(regress_raw(p, x), unrolled_oracle(p, x), atol=1e-12)


def test_zero_network_outputs_zero_and_identity_rotation():
    p = init_params(5, KinematicState.raw_dim(2), hidden=3, mlp=(4,))
    with torch.no_grad():
        for t in p.parameters():
            t.zero_()
    x = np.random.default_rng(0).standard_normal((7, 5))
    assert np.array_equal(regress_raw(p, x), np.zeros((7, 16)))
    states = regress(p, x)
    assert len(states) == 7
    assert all(s.root_rot == UnitQuaternion() for s in states)


@settings(max_examples=20, deadline=None)
@given(t=st.integers(1, 15), seed=st.integers(0, 1000))
def test_output_length_and_causality(t, seed):
    p = tiny(seed % 5)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((t, 3))
    full = regress_raw(p, x)
    assert full.shape == (t, 4)
    assert np.array_equal(regress_raw(p, x[:1])[0], full[0])
    k = rng.integers(1, t + 1)
    y = x.copy()
    y[k:] = rng.standard_normal((t - k, 3))
    assert np.array_equal(regress_raw(p, y)[:k], full[:k])


def test_deterministic(rng):
    x = rng.standard_normal((9, 3))
    assert np.array_equal(regress_raw(tiny(), x), regress_raw(tiny(), x))


def test_shape_mismatch():
    with pytest.raises(RegressorError):
        regress_raw(tiny(), np.zeros((4, 5)))
    with pytest.raises(RegressorError):
        mse_loss(tiny(), np.zeros((4, 3)), np.zeros((3, 4)))


def test_loss_closed_forms(rng):
    p = tiny()
    x = rng.standard_normal((10, 3))
    out = regress_raw(p, x)
    assert mse_loss(p, x, out) == 0.0
    shifted = out.copy()
    shifted[:, 2] += 0.3
    assert math.isclose(mse_loss(p, x, shifted), 0.09, rel_tol=1e-12)


def test_loss_matches_loop_oracle(rng):
    p = tiny()
    x = rng.standard_normal((11, 3))
    y = rng.standard_normal((11, 4))
    out = regress_raw(p, x)
    s = 0.0
    for t in range(11):
        for j in range(4):
            s += (out[t, j] - y[t, j]) ** 2
    assert abs(mse_loss(p, x, y) - s / 11) < 1e-12


def test_loss_permutation_of_pairs(rng):
    from kinres.regressor import sequence_loss
    a = torch.tensor(rng.standard_normal((8, 4)))
    b = torch.tensor(rng.standard_normal((8, 4)))
    perm = torch.tensor(rng.permutation(8))
    assert math.isclose(float(sequence_loss(a, b)), float(sequence_loss(a[perm], b[perm])), rel_tol=1e-14)
    assert not torch.equal(a - b, a[perm] - b[perm])


def test_gradient_matches_finite_differences(rng):
    p = tiny(3)
    x = rng.standard_normal((6, 3))
    y = rng.standard_normal((6, 4))
    g = grad(p, x, y)
    worst = fd_check(p, lambda: mse_loss(p, x, y), g)
    assert worst <= 1e-4


def test_zero_loss_zero_gradient_and_linearity(rng):
    p = tiny(1)
    x = rng.standard_normal((5, 3))
    out = regress_raw(p, x)
    assert all(np.all(v == 0) for v in grad(p, x, out).values())
    y = rng.standard_normal((5, 4))
    g1 = grad(p, x, y)
    g2 = grad(p, x, y, scale=2.0)
    assert all(np.allclose(g2[k], 2 * g1[k], rtol=1e-12, atol=0) for k in g1)


def test_train_linear_map():
    rng = np.random.default_rng(0)
    w = rng.standard_normal((4, 3)) * 0.5
    data = []
    for _ in range(16):
        x = rng.standard_normal((10, 4))
        data.append((x, x @ w))
    res = train_regressor(data, RegressorHyper(steps=2000, hidden=16, mlp=(32,), batch=8))
    assert res.losses[-1] < 1e-3
    sm = res.smoothed(10)
    assert sm[-1] < sm[0]


def test_train_memorizes_identical_pairs():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((8, 3))
    y = rng.standard_normal((8, 2))
    res = train_regressor([(x, y)] * 4, RegressorHyper(steps=600, hidden=16, mlp=(32,), lr=1e-2))
    assert res.losses[-1] < 1e-3 * res.losses[0]


def test_train_errors():
    with pytest.raises(RegressorError):
        train_regressor([])
    x = np.ones((4, 2))
    with pytest.raises(RegressorDiverged, match="step"):
        train_regressor([(x, np.full((4, 1), 1e200))], RegressorHyper(steps=5, hidden=2, mlp=(2,), standardize=False))


def test_checkpoint_round_trip(tmp_path, rng):
    p = tiny(4)
    f = save_params(p, tmp_path / "reg.json")
    q = load_params(f)
    x = rng.standard_normal((5, 3))
    assert np.array_equal(regress_raw(p, x), regress_raw(q, x))
    save_params(q, tmp_path / "again.json")
    assert f.read_bytes() == (tmp_path / "again.json").read_bytes()
    (tmp_path / "bad.json").write_text("{}")
    with pytest.raises(RegressorError):
        load_params(tmp_path / "bad.json")


def test_kinematic_state_round_trip_and_height(humanoid):
    clip = generate_clip(ScenarioSpec("sit", 2), humanoid)
    tg = clip_targets(clip)
    assert tg.shape == (len(clip), KinematicState.raw_dim(humanoid.dof))
    for k in (0, len(clip) - 1):
        s = KinematicState.from_raw(tg[k], humanoid.dof)
        assert np.allclose(s.to_raw(), tg[k], atol=1e-15)
        pose = s.to_pose(humanoid)
        assert abs(pose.root_pos[2] - clip.frames[k].pose.root_pos[2]) < 2e-3
    rest = complete_height(humanoid, UnitQuaternion(), np.zeros(humanoid.dof))
    assert abs(rest - 0.9) < 1e-9


def test_features_feed_regressor(humanoid):
    clip = generate_clip(ScenarioSpec("push", 1), humanoid)
    f = synthesize_features(clip)
    p = init_params(f.dim, KinematicState.raw_dim(humanoid.dof), hidden=8, mlp=(8,))
    states = regress(p, f)
    assert len(states) == len(clip)
    assert isinstance(FeatureSequence(f.values), FeatureSequence)
