import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kinres.core.quat import UnitQuaternion, qmatrix
from kinres.core.types import ObjectState, Pose, Velocity
from kinres.sim.model import ModelError, load_model, model_from_dict
from kinres.sim.scene import Scene, SimConfig, make_box, make_chair
from kinres.sim.simulator import (SimState, Simulator, SimulationDiverged, Termination,
                                  detect_termination, extract_sim_features, pd_torque, rest_state)

from conftest import random_quat


def test_pd_torque_worked_example(pendulum):
    m = pendulum
    # pendulum has kp 8, kd 0.8; scale to check the formula with kp=1, kd=0.1
    tau = pd_torque(m, [0.5], [0.3], [1.0])
    assert tau[0] == pytest.approx(8 * 0.2 - 0.8 * 1.0, abs=1e-12)
    d = {"links": [{"name": "base", "mass": 1, "geom": {"type": "sphere", "radius": 0.1}},
                   {"name": "arm", "parent": "base", "mass": 1,
                    "geom": {"type": "sphere", "radius": 0.1},
                    "joints": [{"name": "j", "axis": "y", "range": [-1, 1], "kp": 1, "kd": 0.1}]}],
         "sites": {"head": {"link": "arm"}}, "end_effectors": []}
    unit = model_from_dict(d)
    assert pd_torque(unit, [0.5], [0.3], [1.0])[0] == pytest.approx(0.1, abs=1e-12)
    assert pd_torque(unit, [0.4], [0.4], [0.0])[0] == 0.0


def test_pd_torque_loop_oracle(humanoid, rng):
    m = humanoid
    for _ in range(20):
        tgt, q, v = (rng.standard_normal(m.dof) for _ in range(3))
        tau = pd_torque(m, tgt, q, v)
        for i in range(m.dof):
            ref = m.kp[i] * (tgt[i] - q[i]) - m.kd[i] * v[i]
            assert abs(tau[i] - ref) <= 1e-12 * max(1.0, abs(ref))


def test_pd_torque_clamped_and_checked(humanoid):
    m = humanoid
    tau = pd_torque(m, np.full(m.dof, 10.0), np.zeros(m.dof), np.zeros(m.dof), torque_limit=200.0)
    assert np.all(tau <= 200.0)
    with pytest.raises(ValueError):
        pd_torque(m, np.zeros(3), np.zeros(m.dof), np.zeros(m.dof))


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_pd_torque_affine(e1, e2, v1, v2):
    m = load_model("pendulum")
    f = lambda e, v: pd_torque(m, [e], [0.0], [v])[0]
    assert f(e1 + e2, v1 + v2) == pytest.approx(f(e1, v1) + f(e2, v2) - f(0, 0), abs=1e-9)


def test_free_fall_closed_form(humanoid):
    cfg = SimConfig(ground=False)
    sim = Simulator(humanoid, cfg=cfg)
    s = rest_state(humanoid, root_pos=(0, 0, 2.0))
    z0 = 2.0
    worst = 0.0
    for _ in range(15):  # 0.5 s
        # zero torque: targets track the current pose with no velocity error
        s = sim.step(s, s.pose.joint_angles)
        expect = z0 - 0.5 * 9.81 * s.sim_time ** 2
        worst = max(worst, abs(s.pose.root_pos[2] - expect))
    assert s.sim_time == pytest.approx(0.5)
    assert worst < 1e-3


def test_box_friction_deceleration(humanoid):
    mu = 0.5
    box = make_box("b", (5, 0, 0.2), half=(0.2, 0.2, 0.2), mass=10, friction=mu)
    scene = Scene((box,))
    sim = Simulator(humanoid, scene, SimConfig(ground_friction=mu))
    s = rest_state(humanoid, scene)
    for _ in range(10):
        s = sim.step(s, np.zeros(humanoid.dof))
    b = s.object("b")
    s = SimState(s.pose, s.velocity, (ObjectState("b", b.pose, np.array([1.0, 0, 0]), np.zeros(3)),),
                 s.sim_time)
    vs = [1.0]
    for _ in range(4):
        s = sim.step(s, np.zeros(humanoid.dof))
        vs.append(s.object("b").lin_vel[0])
    decel = (vs[1] - vs[4]) / 3 * 30.0
    assert decel == pytest.approx(mu * 9.81, rel=0.05)


def test_equilibrium_hold(humanoid):
    sim = Simulator(humanoid)
    s = rest_state(humanoid)
    q0 = s.pose.joint_angles.copy()
    drift = 0.0
    for _ in range(30):
        s = sim.step(s, q0)
        drift = max(drift, np.abs(s.pose.joint_angles - q0).max())
    assert drift < 1e-2
    assert sim.detect_termination(s) == Termination.ALIVE


def test_static_objects_never_move(humanoid):
    chair = make_chair("chair", (0.5, 0, 0))
    scene = Scene((chair,))
    sim = Simulator(humanoid, scene)
    s = rest_state(humanoid, scene)
    for _ in range(5):
        s = sim.step(s, np.zeros(humanoid.dof))
    assert s.object("chair") == chair.initial


def test_deterministic(humanoid, rng):
    sim = Simulator(humanoid)
    s = rest_state(humanoid)
    tgt = 0.1 * rng.standard_normal(humanoid.dof)
    a = sim.step(sim.step(s, tgt), tgt)
    b = Simulator(humanoid).step(Simulator(humanoid).step(s, tgt), tgt)
    assert np.array_equal(a.pose.joint_angles, b.pose.joint_angles)
    assert np.array_equal(a.velocity.root_lin, b.velocity.root_lin)


def _momentum(sim, s):
    m = sim.model
    o, R, w, vo = sim.link_frames(s)
    p = np.zeros(3)
    for i in range(len(m.links)):
        p += m.mass[i] * (vo[i] + np.cross(w[i], R[i] @ m.com[i]))
    return p


def test_linear_momentum_conserved(humanoid, rng):
    m = humanoid
    sim = Simulator(m, cfg=SimConfig(gravity=(0, 0, 0), ground=False))
    s = SimState(Pose(np.array([0, 0, 2.0]), UnitQuaternion.identity(), 0.3 * rng.standard_normal(m.dof)),
                 Velocity(rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(m.dof)))
    p = _momentum(sim, s)
    for _ in range(5):
        s = sim.step(s, s.pose.joint_angles)
        p2 = _momentum(sim, s)
        assert np.abs(p2 - p).max() < 1e-9
        p = p2


def test_divergence_raises(humanoid):
    sim = Simulator(humanoid, cfg=SimConfig(stable_pd=False, ground=False))
    s = SimState(Pose(np.array([0, 0, 2.0]), UnitQuaternion.identity(), np.zeros(humanoid.dof)),
                 Velocity(np.zeros(3), np.zeros(3), np.full(humanoid.dof, 50.0)))
    with pytest.raises(SimulationDiverged):
        for _ in range(30):
            s = sim.step(s, np.zeros(humanoid.dof))


def test_termination_rules(humanoid):
    cfg = SimConfig(horizon_time=2.0)
    sim = Simulator(humanoid, cfg=cfg)
    up = rest_state(humanoid)
    assert sim.detect_termination(up) == Termination.ALIVE
    low = SimState(Pose(np.array([0, 0, 0.1]), UnitQuaternion(), np.zeros(humanoid.dof)),
                   up.velocity)
    assert detect_termination(low, cfg) == Termination.FALLEN
    done = SimState(up.pose, up.velocity, (), 2.0)
    assert sim.detect_termination(done) == Termination.HORIZON
    # lying on the side: non-foot contact alone triggers the fall
    no_plane = Simulator(humanoid, cfg=SimConfig(kill_height=0.0))
    side = SimState(Pose(np.array([0, 0, 0.1]), UnitQuaternion.from_axis_angle((1, 0, 0), math.pi / 2),
                         np.zeros(humanoid.dof)), up.velocity)
    assert no_plane.detect_termination(side) == Termination.FALLEN


def test_rest_pose_end_effectors(humanoid):
    f = extract_sim_features(rest_state(humanoid, root_pos=(0, 0, 0)), humanoid)
    for name in humanoid.end_effectors:
        site = humanoid.sites[name]
        # rest pose: sum of link offsets along the chain plus the site point
        expect = site.point.copy()
        i = site.link
        while i >= 0:
            expect = expect + humanoid.offset[i]
            i = humanoid.parent[i]
        assert np.allclose(f.end_effectors[name], expect, atol=1e-12)


def _axis_rot4(axis, angle):
    m = np.eye(4)
    m[:3, :3] = qmatrix(np.concatenate([[math.cos(angle / 2)], np.asarray(axis) * math.sin(angle / 2)]))
    return m


def _fk_oracle(model, pose):
    """Chain homogeneous transforms link by link."""
    root = np.eye(4)
    root[:3, :3] = qmatrix(pose.root_rot.as_array())
    root[:3, 3] = pose.root_pos
    mats = []
    for i, ln in enumerate(model.links):
        base = root if ln.parent < 0 else mats[ln.parent]
        t = np.eye(4)
        t[:3, 3] = ln.offset
        m = base @ t if ln.parent >= 0 else base.copy()
        for k in range(model.dof_start[i], model.dof_start[i] + model.dof_count[i]):
            m = m @ _axis_rot4(model.dof_axis[k], pose.joint_angles[k])
        mats.append(m)
    return {n: (mats[s.link] @ np.append(s.point, 1.0))[:3] for n, s in model.sites.items()}


def test_fk_matches_chained_transforms(humanoid, rng):
    sim = Simulator(humanoid)
    for _ in range(20):
        pose = Pose(rng.standard_normal(3), UnitQuaternion.from_array(random_quat(rng)),
                    rng.uniform(-1, 1, humanoid.dof))
        s = SimState(pose, Velocity.zeros(humanoid.dof))
        got = sim.site_positions(s)
        ref = _fk_oracle(humanoid, pose)
        for n in ref:
            assert np.allclose(got[n], ref[n], atol=1e-9)


def test_fk_translation_equivariance(humanoid, rng):
    q = rng.uniform(-0.5, 0.5, humanoid.dof)
    a = extract_sim_features(SimState(Pose(np.zeros(3), UnitQuaternion(), q), Velocity.zeros(humanoid.dof)),
                             humanoid)
    b = extract_sim_features(SimState(Pose(np.array([1.0, 0, 0]), UnitQuaternion(), q),
                                      Velocity.zeros(humanoid.dof)), humanoid)
    for n in a.sites:
        assert np.allclose(b.sites[n] - a.sites[n], [1, 0, 0], atol=1e-12)


def test_head_velocity_matches_finite_difference(humanoid, rng):
    sim = Simulator(humanoid)
    pose = Pose(rng.standard_normal(3), UnitQuaternion.from_array(random_quat(rng)),
                rng.uniform(-1, 1, humanoid.dof))
    vel = Velocity(rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(humanoid.dof))
    h = 1e-6
    from kinres.core.quat import qfrom_rotvec, qmul
    pose2 = Pose(pose.root_pos + h * vel.root_lin,
                 UnitQuaternion.from_array(qmul(qfrom_rotvec(h * vel.root_ang), pose.root_rot.as_array()),
                                           normalize=True),
                 pose.joint_angles + h * vel.joint_vel)
    f1 = sim.extract_features(SimState(pose, vel))
    f2 = sim.extract_features(SimState(pose2, vel))
    fd = (f2.head.h_pos - f1.head.h_pos) / h
    assert np.allclose(f1.head.h_lin_vel_world, fd, atol=1e-4)


def test_model_validation():
    bad = {"links": [{"name": "a", "mass": 0, "geom": {"type": "sphere", "radius": 0.1}}],
           "sites": {"head": {"link": "a"}}, "end_effectors": []}
    with pytest.raises(ModelError):
        model_from_dict(bad)


def test_sim_config_substep_ratio():
    with pytest.raises(ValueError):
        SimConfig(sim_dt=0.01, control_dt=0.025)
    assert SimConfig().substeps == 15
