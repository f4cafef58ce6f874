"""Reduced-coordinate rigid-body dynamics kernels (numba).

Generalized coordinates: root position (3), root quaternion (4, wxyz) and one
angle per hinge.  Generalized velocity: root linear velocity (world), root
angular velocity (world) and hinge rates.  The mass matrix is assembled from
per-link COM Jacobians and the bias vector from recursive velocity-product
accelerations, so ``H qdd + C = tau + J^T f``.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


@njit(cache=True)
def quat_to_mat(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    m = np.empty((3, 3))
    m[0, 0] = 1 - 2 * (y * y + z * z)
    m[0, 1] = 2 * (x * y - w * z)
    m[0, 2] = 2 * (x * z + w * y)
    m[1, 0] = 2 * (x * y + w * z)
    m[1, 1] = 1 - 2 * (x * x + z * z)
    m[1, 2] = 2 * (y * z - w * x)
    m[2, 0] = 2 * (x * z - w * y)
    m[2, 1] = 2 * (y * z + w * x)
    m[2, 2] = 1 - 2 * (x * x + y * y)
    return m


@njit(cache=True)
def axis_rot(axis, angle):
    c = np.cos(angle)
    s = np.sin(angle)
    x, y, z = axis[0], axis[1], axis[2]
    t = 1.0 - c
    m = np.empty((3, 3))
    m[0, 0] = t * x * x + c
    m[0, 1] = t * x * y - s * z
    m[0, 2] = t * x * z + s * y
    m[1, 0] = t * x * y + s * z
    m[1, 1] = t * y * y + c
    m[1, 2] = t * y * z - s * x
    m[2, 0] = t * x * z - s * y
    m[2, 1] = t * y * z + s * x
    m[2, 2] = t * z * z + c
    return m


@njit(cache=True)
def quat_integrate(q, omega, dt):
    """Left-multiply ``q`` by the rotation ``omega * dt`` (world frame)."""
    ang = np.sqrt(omega[0] ** 2 + omega[1] ** 2 + omega[2] ** 2) * dt
    if ang < 1e-14:
        dq = np.array([1.0, 0.5 * omega[0] * dt, 0.5 * omega[1] * dt, 0.5 * omega[2] * dt])
    else:
        s = np.sin(0.5 * ang) / (ang / dt)
        dq = np.array([np.cos(0.5 * ang), omega[0] * s, omega[1] * s, omega[2] * s])
    out = np.empty(4)
    out[0] = dq[0] * q[0] - dq[1] * q[1] - dq[2] * q[2] - dq[3] * q[3]
    out[1] = dq[0] * q[1] + dq[1] * q[0] + dq[2] * q[3] - dq[3] * q[2]
    out[2] = dq[0] * q[2] - dq[1] * q[3] + dq[2] * q[0] + dq[3] * q[1]
    out[3] = dq[0] * q[3] + dq[1] * q[2] - dq[2] * q[1] + dq[3] * q[0]
    n = np.sqrt(out[0] ** 2 + out[1] ** 2 + out[2] ** 2 + out[3] ** 2)
    return out / n


@njit(cache=True)
def forward_kinematics(root_pos, root_quat, theta, root_lin, root_ang, thetadot,
                       parent, offset, dof_start, dof_count, dof_axis):
    """Link frames, velocities and velocity-product (qdd = 0) accelerations."""
    nl = parent.shape[0]
    nd = theta.shape[0]
    o = np.zeros((nl, 3))
    R = np.zeros((nl, 3, 3))
    w = np.zeros((nl, 3))
    vo = np.zeros((nl, 3))
    alpha = np.zeros((nl, 3))
    ao = np.zeros((nl, 3))
    axw = np.zeros((nd, 3))
    for i in range(nl):
        p = parent[i]
        if p < 0:
            o[i] = root_pos
            R[i] = quat_to_mat(root_quat)
            w[i] = root_ang
            vo[i] = root_lin
            continue
        r = R[p] @ offset[i]
        o[i] = o[p] + r
        vo[i] = vo[p] + cross(w[p], r)
        ao[i] = ao[p] + cross(alpha[p], r) + cross(w[p], cross(w[p], r))
        rc = R[p].copy()
        wc = w[p].copy()
        ac = alpha[p].copy()
        for k in range(dof_start[i], dof_start[i] + dof_count[i]):
            a = rc @ dof_axis[k]
            axw[k] = a
            ac = ac + cross(wc, a) * thetadot[k]
            wc = wc + a * thetadot[k]
            rc = rc @ axis_rot(dof_axis[k], theta[k])
        R[i] = rc
        w[i] = wc
        alpha[i] = ac
    return o, R, w, vo, alpha, ao, axw


@njit(cache=True)
def point_jacobian(i, x, root_pos, o, axw, dof_start, dof_count, ancestor, nv):
    jv = np.zeros((3, nv))
    jw = np.zeros((3, nv))
    r = x - root_pos
    jv[0, 0] = 1.0
    jv[1, 1] = 1.0
    jv[2, 2] = 1.0
    # omega x r = -[r]x omega
    jv[0, 4] = r[2]
    jv[0, 5] = -r[1]
    jv[1, 3] = -r[2]
    jv[1, 5] = r[0]
    jv[2, 3] = r[1]
    jv[2, 4] = -r[0]
    jw[0, 3] = 1.0
    jw[1, 4] = 1.0
    jw[2, 5] = 1.0
    for j in range(ancestor.shape[1]):
        if not ancestor[i, j]:
            continue
        d = x - o[j]
        for k in range(dof_start[j], dof_start[j] + dof_count[j]):
            c = cross(axw[k], d)
            jv[0, 6 + k] = c[0]
            jv[1, 6 + k] = c[1]
            jv[2, 6 + k] = c[2]
            jw[0, 6 + k] = axw[k, 0]
            jw[1, 6 + k] = axw[k, 1]
            jw[2, 6 + k] = axw[k, 2]
    return jv, jw


@njit(cache=True)
def mass_matrix_bias(root_pos, o, R, w, alpha, ao, axw, gravity,
                     mass, com, inertia, dof_start, dof_count, ancestor):
    nl = mass.shape[0]
    nv = 6 + axw.shape[0]
    H = np.zeros((nv, nv))
    C = np.zeros(nv)
    for i in range(nl):
        rc = R[i] @ com[i]
        c = o[i] + rc
        iw = R[i] @ inertia[i] @ R[i].T
        ac = ao[i] + cross(alpha[i], rc) + cross(w[i], cross(w[i], rc))
        jv, jw = point_jacobian(i, c, root_pos, o, axw, dof_start, dof_count, ancestor, nv)
        H += mass[i] * (jv.T @ jv) + jw.T @ iw @ jw
        f = mass[i] * (ac - gravity)
        tq = iw @ alpha[i] + cross(w[i], iw @ w[i])
        C += jv.T @ f + jw.T @ tq
    return H, C


@njit(cache=True)
def add_point_force(Q, i, x, f, root_pos, o, axw, dof_start, dof_count, ancestor):
    Q[0] += f[0]
    Q[1] += f[1]
    Q[2] += f[2]
    t = cross(x - root_pos, f)
    Q[3] += t[0]
    Q[4] += t[1]
    Q[5] += t[2]
    for j in range(ancestor.shape[1]):
        if not ancestor[i, j]:
            continue
        tj = cross(x - o[j], f)
        for k in range(dof_start[j], dof_start[j] + dof_count[j]):
            Q[6 + k] += axw[k, 0] * tj[0] + axw[k, 1] * tj[1] + axw[k, 2] * tj[2]


@njit(cache=True)
def penalty_force(pen, n, vrel, k, c, kt, mu):
    vn = vrel[0] * n[0] + vrel[1] * n[1] + vrel[2] * n[2]
    fn = k * pen - c * vn
    if fn < 0.0:
        fn = 0.0
    vt = vrel - vn * n
    s = np.sqrt(vt[0] ** 2 + vt[1] ** 2 + vt[2] ** 2)
    f = fn * n
    if s > 1e-12 and fn > 0.0:
        ft = kt * s
        cap = mu * fn
        if ft > cap:
            ft = cap
        f = f - vt * (ft / s)
    return f


@njit(cache=True)
def sphere_box(c, r, bpos, bR, bhalf):
    """Penetration depth, outward box normal and contact point (on the sphere)."""
    d = bR.T @ (c - bpos)
    q = np.empty(3)
    inside = True
    for k in range(3):
        q[k] = d[k]
        if q[k] > bhalf[k]:
            q[k] = bhalf[k]
            inside = False
        elif q[k] < -bhalf[k]:
            q[k] = -bhalf[k]
            inside = False
    if not inside:
        diff = d - q
        dist = np.sqrt(diff[0] ** 2 + diff[1] ** 2 + diff[2] ** 2)
        if dist >= r or dist < 1e-12:
            return -1.0, np.zeros(3), c
        nl = diff / dist
        n = bR @ nl
        return r - dist, n, c - r * n
    best = 0
    gap = bhalf[0] - abs(d[0])
    for k in range(1, 3):
        g = bhalf[k] - abs(d[k])
        if g < gap:
            gap = g
            best = k
    nl = np.zeros(3)
    nl[best] = 1.0 if d[best] >= 0 else -1.0
    n = bR @ nl
    return r + gap, n, c - r * n


@njit(cache=True)
def accelerations(qpos, qvel, target, kick, gravity, fixed_base, stable_pd,
                  torque_limit, contact_params, limit_params,
                  parent, offset, dof_start, dof_count, dof_axis, mass, com, inertia, ancestor,
                  kp, kd, lower, upper, c_link, c_point, c_radius, c_foot,
                  b_pos, b_R, b_half, b_mu, b_body,
                  d_pos, d_quat, d_lin, d_ang, d_mass, d_inertia):
    """Generalized accelerations for the humanoid and dynamic bodies.

    ``kick`` is the length of the velocity update the result feeds; the
    stable-PD damping term is implicit over that interval.
    """
    nd = target.shape[0]
    nv = 6 + nd
    nl = parent.shape[0]
    nc = c_link.shape[0]
    nb = b_pos.shape[0]
    nbody = d_pos.shape[0]
    k_c, c_c, kt_c, mu_ground = contact_params[0], contact_params[1], contact_params[2], contact_params[3]
    has_ground = contact_params[4] > 0.0
    k_lim, d_lim = limit_params[0], limit_params[1]
    first = 0 if not fixed_base else 6
    nonfoot = False
    link_contact = np.zeros(nl, dtype=np.bool_)

    root_pos = qpos[0:3].copy()
    theta = qpos[7:].copy()
    o, R, w, vo, alpha, ao, axw = forward_kinematics(
        root_pos, qpos[3:7].copy(), theta, qvel[0:3], qvel[3:6], qvel[6:],
        parent, offset, dof_start, dof_count, dof_axis)
    H, C = mass_matrix_bias(root_pos, o, R, w, alpha, ao, axw, gravity,
                            mass, com, inertia, dof_start, dof_count, ancestor)
    Q = np.zeros(nv)
    body_f = np.zeros((nbody, 3))
    body_t = np.zeros((nbody, 3))
    for b in range(nb):
        if b_body[b] >= 0:
            b_pos[b] = d_pos[b_body[b]]
            b_R[b] = quat_to_mat(d_quat[b_body[b]])
    for ci in range(nc):
        i = c_link[ci]
        cw = o[i] + R[i] @ c_point[ci]
        r = c_radius[ci]
        pen = r - cw[2]
        if pen > 0.0 and has_ground:
            n = np.array([0.0, 0.0, 1.0])
            x = cw - r * n
            vx = vo[i] + cross(w[i], x - o[i])
            f = penalty_force(pen, n, vx, k_c, c_c, kt_c, mu_ground)
            add_point_force(Q, i, x, f, root_pos, o, axw, dof_start, dof_count, ancestor)
            link_contact[i] = True
            if not c_foot[ci]:
                nonfoot = True
        for b in range(nb):
            pen, n, x = sphere_box(cw, r, b_pos[b], b_R[b], b_half[b])
            if pen <= 0.0:
                continue
            vx = vo[i] + cross(w[i], x - o[i])
            bd = b_body[b]
            if bd >= 0:
                vx = vx - (d_lin[bd] + cross(d_ang[bd], x - d_pos[bd]))
            f = penalty_force(pen, n, vx, k_c, c_c, kt_c, b_mu[b])
            add_point_force(Q, i, x, f, root_pos, o, axw, dof_start, dof_count, ancestor)
            link_contact[i] = True
            if bd >= 0:
                body_f[bd] -= f
                body_t[bd] -= cross(x - d_pos[bd], f)
    for b in range(nb):
        bd = b_body[b]
        if bd < 0 or not has_ground:
            continue
        for sx in (-1.0, 1.0):
            for sy in (-1.0, 1.0):
                for sz in (-1.0, 1.0):
                    loc = np.array([sx * b_half[b, 0], sy * b_half[b, 1], sz * b_half[b, 2]])
                    x = b_pos[b] + b_R[b] @ loc
                    pen = -x[2]
                    if pen <= 0.0:
                        continue
                    n = np.array([0.0, 0.0, 1.0])
                    vx = d_lin[bd] + cross(d_ang[bd], x - d_pos[bd])
                    f = penalty_force(pen, n, vx, k_c, c_c, kt_c, b_mu[b])
                    body_f[bd] += f
                    body_t[bd] += cross(x - d_pos[bd], f)

    tau_lim = np.zeros(nd)
    for k in range(nd):
        if theta[k] < lower[k]:
            tau_lim[k] = k_lim * (lower[k] - theta[k]) - d_lim * qvel[6 + k]
        elif theta[k] > upper[k]:
            tau_lim[k] = k_lim * (upper[k] - theta[k]) - d_lim * qvel[6 + k]
    rhs = Q - C
    tau_out = np.zeros(nd)
    qdd = np.zeros(nv)
    if stable_pd:
        A = H.copy()
        pd = np.zeros(nd)
        r2 = rhs.copy()
        for k in range(nd):
            A[6 + k, 6 + k] += kick * kd[k]
            pd[k] = kp[k] * (target[k] - theta[k] - kick * qvel[6 + k]) - kd[k] * qvel[6 + k]
            r2[6 + k] += pd[k] + tau_lim[k]
        qdd[first:] = np.linalg.solve(A[first:, first:], r2[first:])
        clipped = False
        for k in range(nd):
            t = pd[k] - kick * kd[k] * qdd[6 + k]
            if t > torque_limit[k]:
                t = torque_limit[k]
                clipped = True
            elif t < -torque_limit[k]:
                t = -torque_limit[k]
                clipped = True
            tau_out[k] = t
        if clipped:
            r3 = rhs.copy()
            for k in range(nd):
                r3[6 + k] += tau_out[k] + tau_lim[k]
            qdd[first:] = np.linalg.solve(H[first:, first:], r3[first:])
    else:
        r2 = rhs.copy()
        for k in range(nd):
            t = kp[k] * (target[k] - theta[k]) - kd[k] * qvel[6 + k]
            if t > torque_limit[k]:
                t = torque_limit[k]
            elif t < -torque_limit[k]:
                t = -torque_limit[k]
            tau_out[k] = t
            r2[6 + k] += t + tau_lim[k]
        qdd[first:] = np.linalg.solve(H[first:, first:], r2[first:])

    d_acc = np.zeros((nbody, 3))
    d_wdot = np.zeros((nbody, 3))
    for bd in range(nbody):
        rb = quat_to_mat(d_quat[bd])
        iw = rb @ np.diag(d_inertia[bd]) @ rb.T
        d_acc[bd] = body_f[bd] / d_mass[bd] + gravity
        d_wdot[bd] = np.linalg.solve(iw, body_t[bd] - cross(d_ang[bd], iw @ d_ang[bd]))
    # linear momentum map and net external force on the humanoid
    h_lin = H[0:3, :].copy()
    f_lin = Q[0:3] + mass.sum() * gravity
    return qdd, d_acc, d_wdot, nonfoot, link_contact, tau_out, h_lin, f_lin


@njit(cache=True)
def simulate(qpos, qvel, target, n_sub, dt, gravity, fixed_base, stable_pd,
             torque_limit, contact_params, limit_params,
             parent, offset, dof_start, dof_count, dof_axis, mass, com, inertia, ancestor,
             kp, kd, lower, upper, c_link, c_point, c_radius, c_foot,
             b_pos, b_R, b_half, b_mu, b_body,
             d_pos, d_quat, d_lin, d_ang, d_mass, d_inertia):
    """Advance ``n_sub`` substeps of length ``dt`` in place.

    Symplectic (semi-implicit) Euler on velocities staggered by half a step:
    a half kick opens and closes the control interval, so constant
    accelerations integrate exactly.  For a free base the total linear
    momentum is advanced by the external impulse and the root velocity is
    projected back onto it, so momentum is conserved when no external force
    acts.  Returns (non-foot ground contact seen,
    per-link contact flags, last applied joint torques).
    """
    nv = qvel.shape[0]
    nbody = d_pos.shape[0]
    first = 0 if not fixed_base else 6
    nonfoot_any = False
    link_any = np.zeros(parent.shape[0], dtype=np.bool_)
    tau = np.zeros(target.shape[0])
    m_tot = mass.sum()
    p_lin = np.zeros(3)
    for s in range(n_sub + 1):
        kick = dt if 0 < s < n_sub else 0.5 * dt
        qdd, d_acc, d_wdot, nonfoot, link_contact, tau, h_lin, f_lin = accelerations(
            qpos, qvel, target, kick, gravity, fixed_base, stable_pd,
            torque_limit, contact_params, limit_params,
            parent, offset, dof_start, dof_count, dof_axis, mass, com, inertia, ancestor,
            kp, kd, lower, upper, c_link, c_point, c_radius, c_foot,
            b_pos, b_R, b_half, b_mu, b_body,
            d_pos, d_quat, d_lin, d_ang, d_mass, d_inertia)
        nonfoot_any = nonfoot_any or nonfoot
        link_any = link_any | link_contact
        if s == 0:
            p_lin = h_lin @ qvel
        for k in range(first, nv):
            qvel[k] += kick * qdd[k]
        if not fixed_base:
            p_lin = p_lin + kick * f_lin
            qvel[0:3] += (p_lin - h_lin @ qvel) / m_tot
        for bd in range(nbody):
            d_lin[bd] += kick * d_acc[bd]
            d_ang[bd] += kick * d_wdot[bd]
        if s == n_sub:
            break
        if not fixed_base:
            for k in range(3):
                qpos[k] += dt * qvel[k]
            qpos[3:7] = quat_integrate(qpos[3:7], qvel[3:6], dt)
        for k in range(6, nv):
            qpos[1 + k] += dt * qvel[k]
        for bd in range(nbody):
            d_pos[bd] += dt * d_lin[bd]
            d_quat[bd] = quat_integrate(d_quat[bd], d_ang[bd], dt)
    return nonfoot_any, link_any, tau
