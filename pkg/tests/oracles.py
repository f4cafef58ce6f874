"""Independent reference implementations used by the tests.

Written with scalar loops and 3x3 matrices only, sharing no code with the
package under test beyond the input containers.
"""
import math

import numpy as np


def rodrigues(axis, angle):
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    t = 1.0 - c
    return np.array([[c + x * x * t, x * y * t - z * s, x * z * t + y * s],
                     [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
                     [z * x * t - y * s, z * y * t + x * s, c + z * z * t]])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([[w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
                     [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
                     [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z]])


def matrix_angle(r):
    """Rotation angle of a 3x3 rotation matrix, robust near 0 and pi."""
    ax = 0.5 * math.sqrt((r[2][1] - r[1][2]) ** 2 + (r[0][2] - r[2][0]) ** 2 + (r[1][0] - r[0][1]) ** 2)
    co = 0.5 * (r[0][0] + r[1][1] + r[2][2] - 1.0)
    return math.atan2(ax, co)


def rot_distance(qa, qb):
    ra = quat_to_matrix(qa)
    rb = quat_to_matrix(qb)
    return matrix_angle(ra.T @ rb)


def pose_sq_sum(gen, ref, groups, axes):
    total = 0.0
    for idx in groups:
        ra = np.eye(3)
        rb = np.eye(3)
        for k in idx:
            ra = ra @ rodrigues(axes[k], gen[k])
            rb = rb @ rodrigues(axes[k], ref[k])
        a = matrix_angle(rb.T @ ra)
        total += a * a
    return total


def sq(v):
    s = 0.0
    for x in v:
        s += float(x) * float(x)
    return s


def diff(a, b):
    return [float(x) - float(y) for x, y in zip(a, b)]


def imitation_components(gen_pose, gen_vel, gen_ee, ref_pose, ref_vel, ref_ee, groups, axes):
    r_p = math.exp(-5.0 * pose_sq_sum(gen_pose.joint_angles, ref_pose.joint_angles, groups, axes))
    s = 0.0
    for k in gen_ee:
        s += sq(diff(gen_ee[k], ref_ee[k]))
    r_e = math.exp(-4.5 * s)
    r_rv = math.exp(-sq(diff(gen_vel.root_lin, ref_vel.root_lin))
                    - 0.1 * sq(diff(gen_vel.root_ang, ref_vel.root_ang)))
    a = rot_distance(gen_pose.root_rot.as_array(), ref_pose.root_rot.as_array())
    r_rq = math.exp(-40.0 * a * a)
    r_rp = math.exp(-45.0 * sq(diff(gen_pose.root_pos, ref_pose.root_pos)))
    return {"r_p": r_p, "r_e": r_e, "r_rv": r_rv, "r_rq": r_rq, "r_rp": r_rp}


def finetune_components(gen_head, gen_pose, kin_pose, ref_head, mu, mu_t, groups, axes):
    r_hp = math.exp(-10.0 * sq(diff(ref_head.h_pos, gen_head.h_pos)))
    a = rot_distance(ref_head.h_rot.as_array(), gen_head.h_rot.as_array())
    r_hq = math.exp(-10.0 * a * a)
    r_hv = math.exp(-0.1 * sq(diff(ref_head.h_lin_vel_world, gen_head.h_lin_vel_world)))
    r_p = math.exp(-5.0 * pose_sq_sum(gen_pose.joint_angles, kin_pose.joint_angles, groups, axes))
    r_a = math.exp(-1.0 * sq(diff(mu_t, mu)))
    lam = math.exp(-0.1 * sq(diff(ref_head.h_lin_vel_local, gen_head.h_lin_vel_local)))
    return {"r_hp": r_hp, "r_hq": r_hq, "r_hv": r_hv, "r_p_ft": r_p, "r_a": r_a}, lam


def gae(rewards, values, dones, last_value, gamma, lam):
    """Hand-unrolled backward recursion."""
    n = len(rewards)
    adv = [0.0] * n
    nxt_adv = 0.0
    for t in reversed(range(n)):
        if dones[t]:
            nv, nxt_adv = 0.0, 0.0
        else:
            nv = last_value if t == n - 1 else values[t + 1]
        delta = rewards[t] + gamma * nv - values[t]
        nxt_adv = delta + gamma * lam * nxt_adv
        adv[t] = nxt_adv
    return adv


def fd_check(module, loss_fn, grads, h=1e-5, floor=1e-8):
    """Worst relative gap between ``grads`` and central finite differences of
    ``loss_fn`` over every element of every parameter of ``module``."""
    import torch
    worst = 0.0
    with torch.no_grad():
        for name, p in module.named_parameters():
            flat = p.view(-1)
            g = np.asarray(grads[name]).reshape(-1)
            for i in range(flat.numel()):
                old = float(flat[i])
                flat[i] = old + h
                up = loss_fn()
                flat[i] = old - h
                down = loss_fn()
                flat[i] = old
                fd = (up - down) / (2 * h)
                rel = abs(fd - g[i]) / max(abs(fd), abs(g[i]), floor)
                worst = max(worst, rel)
    return worst
