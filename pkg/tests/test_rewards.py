import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kinres.core.quat import UnitQuaternion
from kinres.core.types import HeadSample, Pose, Velocity
from kinres.rewards import (RewardError, RewardWeights, action_reward, adaptive_lambda,
                            end_effector_reward, finetune_reward, imitation_reward, joint_distances,
                            pose_reward, root_rewards)
from kinres.sim.simulator import SimFeatures

import oracles
from helpers import rand_head, random_pair


def _pose(n=4, x=0.0, yaw=0.0, joints=None):
    q = np.zeros(n) if joints is None else np.asarray(joints, float)
    return Pose(np.array([x, 0, 0.9]), UnitQuaternion.from_axis_angle((0, 0, 1), yaw), q)


def test_pose_reward_examples(humanoid):
    n = humanoid.dof
    p = _pose(n)
    assert pose_reward(p, p, humanoid) == 1.0
    one = np.zeros(n)
    one[0] = 0.1
    assert pose_reward(_pose(n, joints=one), p, humanoid) == pytest.approx(math.exp(-0.05), abs=1e-12)
    assert math.exp(-0.05) == pytest.approx(0.951229, abs=1e-6)
    two = one.copy()
    two[2] = 0.1  # a different link than dof 0
    assert not any(0 in g and 2 in g for g in humanoid.joint_groups)
    r = pose_reward(_pose(n, joints=two), p, humanoid)
    assert r == pytest.approx(math.exp(-0.10), abs=1e-12)
    assert r == pytest.approx(0.904837, abs=1e-6)


def test_pose_reward_no_model_wraps():
    a = _pose(1, joints=[math.pi - 0.05])
    b = _pose(1, joints=[-math.pi + 0.05])
    assert pose_reward(a, b) == pytest.approx(math.exp(-5 * 0.1 ** 2), abs=1e-12)


def test_pose_reward_dof_mismatch(humanoid):
    with pytest.raises(RewardError):
        pose_reward(_pose(3), _pose(4))


def test_end_effector_examples(rng):
    a = {"foot_l": np.zeros(3), "hand_r": np.ones(3)}
    assert end_effector_reward(a, a) == 1.0
    b = dict(a, foot_l=np.array([0.1, 0, 0]))
    assert end_effector_reward(b, a) == pytest.approx(math.exp(-0.045), abs=1e-12)
    with pytest.raises(RewardError):
        end_effector_reward({"foot_l": np.zeros(3)}, a)
    for _ in range(50):
        g = {k: rng.standard_normal(3) for k in "abcde"}
        r = {k: rng.standard_normal(3) for k in "abcde"}
        s = sum(oracles.sq(oracles.diff(g[k], r[k])) for k in g)
        assert end_effector_reward(g, r) == pytest.approx(math.exp(-4.5 * s), abs=1e-12)


def test_root_reward_examples():
    v = Velocity.zeros(4)
    p = _pose()
    assert root_rewards((p, v), (p, v)) == (1.0, 1.0, 1.0)
    r_rv, r_rq, r_rp = root_rewards((_pose(x=0.1), v), (p, v))
    assert r_rp == pytest.approx(0.637628, abs=1e-6)
    assert (r_rv, r_rq) == (1.0, 1.0)
    _, r_rq, _ = root_rewards((_pose(yaw=0.1), v), (p, v))
    assert r_rq == pytest.approx(math.exp(-0.4), abs=1e-12)
    assert r_rq == pytest.approx(0.670320, abs=1e-6)


def _exact_features(model, frame, ee):
    return SimFeatures(frame.pose, frame.velocity, ee, frame.head)


def test_imitation_examples(humanoid, rng):
    feats, ref, ref_ee = random_pair(rng, humanoid, scale=0.0)
    w = RewardWeights()
    b = imitation_reward(feats, ref, w, humanoid, ref_ee)
    assert b.total == pytest.approx(1.0, abs=1e-12)
    # only the root position is off by 0.1 m
    shifted = Pose(ref.pose.root_pos + np.array([0.1, 0, 0]), ref.pose.root_rot, ref.pose.joint_angles)
    f2 = SimFeatures(shifted, ref.velocity, ref_ee, ref.head)
    eq = RewardWeights(0.2, 0.2, 0.2, 0.2, 0.2)
    b = imitation_reward(f2, ref, eq, humanoid, ref_ee)
    assert b.total == pytest.approx(0.8 + 0.2 * math.exp(-0.45), abs=1e-12)
    assert b.total == pytest.approx(0.927526, abs=1e-6)
    only_p = RewardWeights(1, 0, 0, 0, 0)
    feats, ref, ref_ee = random_pair(rng, humanoid, scale=0.3)
    b = imitation_reward(feats, ref, only_p, humanoid, ref_ee)
    assert b.total == b.components["r_p"]


def test_imitation_matches_oracle(humanoid, rng):
    w = RewardWeights()
    for _ in range(300):
        feats, ref, ref_ee = random_pair(rng, humanoid)
        b = imitation_reward(feats, ref, w, humanoid, ref_ee)
        o = oracles.imitation_components(feats.pose, feats.velocity, feats.end_effectors,
                                         ref.pose, ref.velocity, ref_ee,
                                         humanoid.joint_groups, humanoid.dof_axis)
        for k, v in o.items():
            assert abs(b.components[k] - v) <= 1e-12
            assert 0.0 < b.components[k] <= 1.0
        assert abs(b.total - sum(b.weights[k] * b.components[k] for k in o)) <= 1e-12


def test_imitation_ref_ee_from_fk(humanoid, rng):
    from kinres.sim.simulator import pose_site_positions
    feats, ref, _ = random_pair(rng, humanoid)
    ee = pose_site_positions(humanoid, ref.pose, humanoid.end_effectors)
    a = imitation_reward(feats, ref, RewardWeights(), humanoid)
    b = imitation_reward(feats, ref, RewardWeights(), humanoid, ee)
    assert a.total == b.total


def test_lambda_examples():
    z = np.zeros(3)
    assert adaptive_lambda(z, z) == 1.0
    assert adaptive_lambda([1, 0, 0], z) == pytest.approx(0.904837, abs=1e-6)
    assert adaptive_lambda([0, 3, 0], z) == pytest.approx(0.406570, abs=1e-6)


def test_lambda_monotone_on_grid():
    mags = np.linspace(0, 10, 201)
    vals = [adaptive_lambda([m, 0, 0], np.zeros(3)) for m in mags]
    assert vals[0] == 1.0
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_finetune_all_matching(humanoid, rng):
    feats, ref, _ = random_pair(rng, humanoid, scale=0.0)
    w = RewardWeights()
    mu = rng.standard_normal(humanoid.dof)
    b = finetune_reward(feats, ref.pose, ref.head, mu, mu, w, humanoid)
    assert b.lam == 1.0
    assert b.total == pytest.approx(w.w_hp + w.w_hq + w.w_hv + w.w_p_ft, abs=1e-12)


def test_finetune_lambda_zero_limit(humanoid, rng):
    feats, ref, _ = random_pair(rng, humanoid, scale=0.0)
    fast = HeadSample(ref.head.h_pos, ref.head.h_rot, ref.head.h_lin_vel_world,
                      ref.head.h_lin_vel_local + 1e3)
    w = RewardWeights()
    b = finetune_reward(feats, ref.pose, fast, np.zeros(3), np.zeros(3), w, humanoid)
    assert b.lam == pytest.approx(0.0, abs=1e-300)
    assert b.total == pytest.approx(w.w_hp + w.w_hq + w.w_hv + w.w_a, abs=1e-12)


def test_finetune_mixed_case(humanoid):
    # lambda = 0.5, r_p' = 0.9, r_a = 0.8 with exact heads and equal weights
    n = humanoid.dof
    d_lv = math.sqrt(math.log(2) / 0.1)
    d_mu = math.sqrt(-math.log(0.8))
    kin = np.zeros(n)
    gen = np.zeros(n)
    gen[0] = math.sqrt(-math.log(0.9) / 5.0)
    head = HeadSample(np.zeros(3), UnitQuaternion(), np.zeros(3))
    ref_head = HeadSample(np.zeros(3), UnitQuaternion(), np.zeros(3), np.array([d_lv, 0, 0]))
    feats = SimFeatures(_pose(n, joints=gen), Velocity.zeros(n), {}, head)
    w = RewardWeights(w_hp=0.2, w_hq=0.2, w_hv=0.2, w_p_ft=0.2, w_a=0.2)
    b = finetune_reward(feats, _pose(n, joints=kin), ref_head, np.zeros(2), np.array([d_mu, 0]), w, humanoid)
    assert b.lam == pytest.approx(0.5, abs=1e-12)
    assert b.components["r_p_ft"] == pytest.approx(0.9, abs=1e-12)
    assert b.components["r_a"] == pytest.approx(0.8, abs=1e-12)
    assert b.total == pytest.approx(0.77, abs=1e-12)


def test_finetune_matches_oracle(humanoid, rng):
    w = RewardWeights()
    for _ in range(300):
        feats, ref, _ = random_pair(rng, humanoid)
        kin = Pose(ref.pose.root_pos, ref.pose.root_rot, ref.pose.joint_angles + 0.1 * rng.standard_normal(humanoid.dof))
        mu, mu_t = rng.standard_normal(humanoid.dof), rng.standard_normal(humanoid.dof)
        b = finetune_reward(feats, kin, ref.head, mu, mu_t, w, humanoid)
        o, lam = oracles.finetune_components(feats.head, feats.pose, kin, ref.head, mu, mu_t,
                                             humanoid.joint_groups, humanoid.dof_axis)
        for k, v in o.items():
            assert abs(b.components[k] - v) <= 1e-12
        assert abs(b.lam - lam) <= 1e-12
        expect = (w.w_hp * o["r_hp"] + w.w_hq * o["r_hq"] + w.w_hv * o["r_hv"]
                  + w.w_p_ft * lam * o["r_p_ft"] + w.w_a * (1 - lam) * o["r_a"])
        assert abs(b.total - expect) <= 1e-12


def test_action_reward_length_mismatch():
    with pytest.raises(RewardError):
        action_reward(np.zeros(3), np.zeros(4))


def test_weights_normalized():
    w = RewardWeights(2, 2, 2, 2, 2, 1, 1, 1, 1, 1)
    assert sum(w.imitation) == pytest.approx(1.0)
    assert w.w_p == pytest.approx(0.2)
    assert sum(w.finetune) == pytest.approx(1.0)
    with pytest.raises(RewardError):
        RewardWeights(w_p=-1)
    with pytest.raises(RewardError):
        RewardWeights.from_dict({"w_bogus": 1})


@given(st.floats(0, 3), st.floats(0, 3))
def test_components_strictly_decreasing(a, b):
    lo, hi = sorted((a, b))
    if hi - lo < 1e-6:
        return
    e = lambda d: end_effector_reward({"x": [d, 0, 0]}, {"x": [0, 0, 0]})
    assert 0 < e(hi) < e(lo) <= 1
    act = lambda d: action_reward([d], [0.0])
    assert 0 < act(hi) < act(lo) <= 1
    j = lambda d: pose_reward([min(d, 3.0)], [0.0])
    assert j(hi) < j(lo)


@given(st.floats(-math.pi, math.pi), st.floats(-5, 5), st.floats(-5, 5))
def test_rigid_transform_invariance(yaw, tx, ty):
    rng = np.random.default_rng(7)
    from kinres.sim.model import load_model
    model = load_model("pendulum")
    rot = UnitQuaternion.from_axis_angle((0, 0, 1), yaw)
    t = np.array([tx, ty, 0.0])
    move = lambda p: rot.rotate(p) + t
    g = {k: rng.standard_normal(3) for k in "ab"}
    r = {k: rng.standard_normal(3) for k in "ab"}
    before = end_effector_reward(g, r)
    after = end_effector_reward({k: move(v) for k, v in g.items()}, {k: move(v) for k, v in r.items()})
    assert after == pytest.approx(before, abs=1e-12)
    # local head velocities do not depend on the world frame
    h1, h2 = rand_head(rng), rand_head(rng)
    lam = adaptive_lambda(h1.h_lin_vel_local, h2.h_lin_vel_local)
    m1 = HeadSample(move(h1.h_pos), rot * h1.h_rot, rot.rotate(h1.h_lin_vel_world))
    m2 = HeadSample(move(h2.h_pos), rot * h2.h_rot, rot.rotate(h2.h_lin_vel_world))
    assert adaptive_lambda(m1.h_lin_vel_local, m2.h_lin_vel_local) == pytest.approx(lam, abs=1e-9)
    # pose reward only sees joint angles
    pa, pb = _pose(1, joints=[0.3]), _pose(1, joints=[-0.2])
    assert pose_reward(pa, pb, model) == pose_reward(
        Pose(move(pa.root_pos), rot * pa.root_rot, pa.joint_angles),
        Pose(move(pb.root_pos), rot * pb.root_rot, pb.joint_angles), model)
    # root and head position terms: equal after moving both sides
    v = Velocity.zeros(1)
    _, rq, rp = root_rewards((pa, v), (pb, v))
    _, rq2, rp2 = root_rewards((Pose(move(pa.root_pos), rot * pa.root_rot, pa.joint_angles), v),
                               (Pose(move(pb.root_pos), rot * pb.root_rot, pb.joint_angles), v))
    assert rp2 == pytest.approx(rp, abs=1e-12)
    assert rq2 == pytest.approx(rq, abs=1e-9)


def test_joint_distances_group_composition(humanoid):
    # two hinges on the same link compose into one rotation distance
    g = next(idx for idx in humanoid.joint_groups if len(idx) >= 2)
    a = np.zeros(humanoid.dof)
    a[g[0]] = 0.3
    a[g[1]] = 0.4
    d = joint_distances(a, np.zeros(humanoid.dof), humanoid)
    k = humanoid.joint_groups.index(g)
    assert d[k] == pytest.approx(oracles.pose_sq_sum(a, np.zeros(humanoid.dof), [g], humanoid.dof_axis) ** 0.5,
                                 abs=1e-12)
