"""Numba core of the planar articulated dynamics.

The agent is a rooted tree of rigid links in the x-z plane described in
generalized coordinates q = [root_x, root_z, root_angle, hinge angles...].
Each substep assembles the mass matrix and velocity-product bias from
per-body Jacobians, adds gravity, motor torques, joint-limit penalties and
spring-damper ground contacts, solves M qdd = Q, and integrates
semi-implicitly (velocity first, then position). Everything operates on
flat float64 arrays so the whole control step JITs into one kernel.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _terrain_lookup(x, x0, dx, samples, gap_mask):
    """Height and slope under x; returns (height, slope, solid)."""
    n = samples.shape[0]
    pos = (x - x0) / dx
    i = int(np.floor(pos))
    if i < 0:
        i = 0
    if i > n - 2:
        i = n - 2
    if gap_mask[i] or gap_mask[i + 1]:
        return 0.0, 0.0, False
    frac = pos - i
    if frac < 0.0:
        frac = 0.0
    if frac > 1.0:
        frac = 1.0
    h = samples[i] * (1.0 - frac) + samples[i + 1] * frac
    slope = (samples[i + 1] - samples[i]) / dx
    return h, slope, True


@njit(cache=True)
def step_kernel(q, qd, torques,
                order, parent, dof, theta0, length, radius, mass, inertia,
                gear, qlim, anc_count, anc_dof, anc_body,
                x0, dx, samples, gap_mask,
                n_sub, dt, gravity,
                kn, cn, ct, mu, fn_cap, armature, joint_damping, limit_k, limit_c,
                root_rate_cap, hinge_rate_cap):
    """Advance (q, qd) in place by n_sub substeps of size dt. Returns 0 if the
    state stayed numerically sane, 1 otherwise."""
    nb = order.shape[0]
    dim = q.shape[0]

    ang = np.empty(nb)
    w = np.empty(nb)
    attach = np.empty((nb, 2))
    com = np.empty((nb, 2))
    tip = np.empty((nb, 2))
    v_com = np.empty((nb, 2))
    v_tip = np.empty((nb, 2))
    ba_com = np.empty((nb, 2))
    ba_tip = np.empty((nb, 2))

    M = np.empty((dim, dim))
    Q = np.empty(dim)
    colx = np.empty(dim)
    colz = np.empty(dim)
    crot = np.empty(dim)
    dofs = np.empty(dim, dtype=np.int64)

    for _ in range(n_sub):
        # ---- forward kinematics -------------------------------------------
        for oi in range(nb):
            k = order[oi]
            if parent[k] < 0:
                ang[k] = q[2]
                w[k] = qd[2]
                attach[k, 0] = q[0]
                attach[k, 1] = q[1]
                com[k, 0] = q[0]
                com[k, 1] = q[1]
                tip[k, 0] = q[0]
                tip[k, 1] = q[1]
                v_com[k, 0] = qd[0]
                v_com[k, 1] = qd[1]
                v_tip[k, 0] = qd[0]
                v_tip[k, 1] = qd[1]
                ba_com[k, 0] = 0.0
                ba_com[k, 1] = 0.0
                ba_tip[k, 0] = 0.0
                ba_tip[k, 1] = 0.0
            else:
                p = parent[k]
                ang[k] = ang[p] + theta0[k] + q[dof[k]]
                w[k] = w[p] + qd[dof[k]]
                ax = tip[p, 0]
                az = tip[p, 1]
                attach[k, 0] = ax
                attach[k, 1] = az
                dx_b = np.cos(ang[k])
                dz_b = np.sin(ang[k])
                com[k, 0] = ax + 0.5 * length[k] * dx_b
                com[k, 1] = az + 0.5 * length[k] * dz_b
                tip[k, 0] = ax + length[k] * dx_b
                tip[k, 1] = az + length[k] * dz_b
                # velocity of a body-fixed point r: v_attach + w * perp(r - attach)
                vax = v_tip[p, 0]
                vaz = v_tip[p, 1]
                v_com[k, 0] = vax - w[k] * (com[k, 1] - az)
                v_com[k, 1] = vaz + w[k] * (com[k, 0] - ax)
                v_tip[k, 0] = vax - w[k] * (tip[k, 1] - az)
                v_tip[k, 1] = vaz + w[k] * (tip[k, 0] - ax)
                # zero-acceleration (bias) terms: centripetal only, since the
                # rotation rows of the Jacobian are constant
                bax = ba_tip[p, 0]
                baz = ba_tip[p, 1]
                w2 = w[k] * w[k]
                ba_com[k, 0] = bax - w2 * (com[k, 0] - ax)
                ba_com[k, 1] = baz - w2 * (com[k, 1] - az)
                ba_tip[k, 0] = bax - w2 * (tip[k, 0] - ax)
                ba_tip[k, 1] = baz - w2 * (tip[k, 1] - az)

        # ---- mass matrix, bias, gravity -----------------------------------
        for a in range(dim):
            Q[a] = 0.0
            for b in range(dim):
                M[a, b] = 0.0

        for k in range(nb):
            nd = 3 + anc_count[k]
            # com Jacobian columns of body k
            dofs[0] = 0
            colx[0] = 1.0
            colz[0] = 0.0
            crot[0] = 0.0
            dofs[1] = 1
            colx[1] = 0.0
            colz[1] = 1.0
            crot[1] = 0.0
            dofs[2] = 2
            colx[2] = -(com[k, 1] - q[1])
            colz[2] = com[k, 0] - q[0]
            crot[2] = 1.0
            for j in range(anc_count[k]):
                a_body = anc_body[k, j]
                dofs[3 + j] = anc_dof[k, j]
                colx[3 + j] = -(com[k, 1] - attach[a_body, 1])
                colz[3 + j] = com[k, 0] - attach[a_body, 0]
                crot[3 + j] = 1.0
            mk = mass[k]
            Ik = inertia[k]
            for a in range(nd):
                da = dofs[a]
                # gravity + velocity-product bias enter the force vector here
                Q[da] -= mk * (gravity * colz[a]
                               + colx[a] * ba_com[k, 0] + colz[a] * ba_com[k, 1])
                for b in range(nd):
                    db = dofs[b]
                    M[da, db] += mk * (colx[a] * colx[b] + colz[a] * colz[b]) \
                        + Ik * crot[a] * crot[b]

        # ---- motors, joint damping, joint limits --------------------------
        for k in range(nb):
            d = dof[k]
            if d < 0:
                continue
            tau = torques[k]
            if tau > 1.0:
                tau = 1.0
            if tau < -1.0:
                tau = -1.0
            Q[d] += tau * gear[k] - joint_damping * qd[d]
            if q[d] > qlim[k]:
                Q[d] -= limit_k * (q[d] - qlim[k]) + limit_c * qd[d]
            elif q[d] < -qlim[k]:
                Q[d] -= limit_k * (q[d] + qlim[k]) + limit_c * qd[d]

        # ---- ground contacts ----------------------------------------------
        for k in range(nb):
            # two candidate points per rod (mid, tip); the head uses its disc
            for which in range(2):
                if parent[k] < 0:
                    if which == 1:
                        continue
                    px = com[k, 0]
                    pz = com[k, 1]
                    vx = v_com[k, 0]
                    vz = v_com[k, 1]
                else:
                    if which == 0:
                        px = com[k, 0]
                        pz = com[k, 1]
                        vx = v_com[k, 0]
                        vz = v_com[k, 1]
                    else:
                        px = tip[k, 0]
                        pz = tip[k, 1]
                        vx = v_tip[k, 0]
                        vz = v_tip[k, 1]
                rr = radius[k]
                h, slope, solid = _terrain_lookup(px, x0, dx, samples, gap_mask)
                if not solid:
                    continue
                pen_v = h - (pz - rr)
                if pen_v <= 0.0:
                    continue
                inv = 1.0 / np.sqrt(1.0 + slope * slope)
                nx = -slope * inv
                nz = inv
                tx = inv
                tz = slope * inv
                d_n = pen_v * inv
                vn = vx * nx + vz * nz
                vt = vx * tx + vz * tz
                fn = kn * d_n - cn * vn
                if fn < 0.0:
                    fn = 0.0
                if fn > fn_cap:
                    fn = fn_cap
                ft = -ct * vt
                cap = mu * fn
                if ft > cap:
                    ft = cap
                if ft < -cap:
                    ft = -cap
                fx = fn * nx + ft * tx
                fz = fn * nz + ft * tz
                # project the contact force through the point Jacobian
                Q[0] += fx
                Q[1] += fz
                Q[2] += -(pz - q[1]) * fx + (px - q[0]) * fz
                for j in range(anc_count[k]):
                    a_body = anc_body[k, j]
                    Q[anc_dof[k, j]] += -(pz - attach[a_body, 1]) * fx \
                        + (px - attach[a_body, 0]) * fz

        # ---- solve and integrate ------------------------------------------
        for a in range(dim):
            M[a, a] += 1e-9
        for k in range(nb):
            if dof[k] >= 0:
                M[dof[k], dof[k]] += armature
        qdd = np.linalg.solve(M, Q)
        ok = True
        for a in range(dim):
            if not np.isfinite(qdd[a]):
                ok = False
        if not ok:
            return 1
        for a in range(dim):
            qd[a] += dt * qdd[a]
            cap = root_rate_cap if a < 3 else hinge_rate_cap
            if qd[a] > cap:
                qd[a] = cap
            if qd[a] < -cap:
                qd[a] = -cap
            q[a] += dt * qd[a]
        # hard hinge-limit projection keeps angles inside their range
        for k in range(nb):
            d = dof[k]
            if d < 0:
                continue
            if q[d] > qlim[k]:
                q[d] = qlim[k]
                if qd[d] > 0.0:
                    qd[d] = 0.0
            elif q[d] < -qlim[k]:
                q[d] = -qlim[k]
                if qd[d] < 0.0:
                    qd[d] = 0.0
    return 0
