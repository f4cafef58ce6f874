import numpy as np

from kinres.core.quat import UnitQuaternion
from kinres.core.types import Frame, HeadSample, Pose, Velocity
from kinres.sim.simulator import SimFeatures


def rand_quat(rng):
    q = rng.standard_normal(4)
    return UnitQuaternion.from_array(q / np.linalg.norm(q), normalize=True)


def near_quat(rng, q, scale):
    from kinres.core.quat import qfrom_rotvec, qmul
    return UnitQuaternion.from_array(qmul(q.as_array(), qfrom_rotvec(scale * rng.standard_normal(3))),
                                     normalize=True)


def rand_head(rng, base=None, scale=0.2):
    if base is None:
        return HeadSample(rng.standard_normal(3), rand_quat(rng), rng.standard_normal(3))
    return HeadSample(base.h_pos + scale * rng.standard_normal(3), near_quat(rng, base.h_rot, scale),
                      base.h_lin_vel_world + scale * rng.standard_normal(3))


def random_pair(rng, model, scale=None):
    """A (generated features, reference frame, reference end effectors) triple
    with discrepancies of random magnitude."""
    s = rng.uniform(0.0, 0.5) if scale is None else scale
    n = model.dof
    ref_pose = Pose(rng.standard_normal(3), rand_quat(rng), rng.uniform(-2, 2, n))
    ref_vel = Velocity(rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(n))
    gen_pose = Pose(ref_pose.root_pos + s * rng.standard_normal(3), near_quat(rng, ref_pose.root_rot, s),
                    ref_pose.joint_angles + s * rng.standard_normal(n))
    gen_vel = Velocity(ref_vel.root_lin + s * rng.standard_normal(3),
                       ref_vel.root_ang + s * rng.standard_normal(3), ref_vel.joint_vel)
    ref_ee = {k: rng.standard_normal(3) for k in model.end_effectors}
    gen_ee = {k: v + s * rng.standard_normal(3) for k, v in ref_ee.items()}
    ref_head = rand_head(rng)
    gen_head = rand_head(rng, ref_head, s)
    feats = SimFeatures(gen_pose, gen_vel, gen_ee, gen_head)
    return feats, Frame(ref_pose, ref_vel, (), ref_head), ref_ee
