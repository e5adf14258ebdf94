"""Numba kernels for the 1 kHz loops: iLQG passes and closed-loop simulation.

Everything here is a plain-array mirror of the numpy reference
implementations in ``simulator`` and ``control.linearize``; tests assert
the two stay bit-compatible.  Keep these functions free of Python
objects so they stay jittable.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _accel(x, v, u, anchors, attachments, ratios, mass, damping, gravity):
    ax = 0.0
    ay = -gravity
    for i in range(4):
        dx = anchors[i, 0] - (x[0] + attachments[i, 0])
        dy = anchors[i, 1] - (x[1] + attachments[i, 1])
        dist = np.sqrt(dx * dx + dy * dy)
        if dist < 1e-12:
            dist = 1e-12
        f = ratios[i] * u[i] / dist
        ax += f * dx / mass
        ay += f * dy / mass
    ax -= damping / mass * v[0]
    ay -= damping / mass * v[1]
    return ax, ay


@njit(cache=True)
def plant_rollout(
    s0, us, anchors, attachments, ratios, mass, damping, gravity, dt
):
    """Open-loop rollout of the 4-state plant; returns (n+1, 4) states."""
    n = us.shape[0]
    out = np.empty((n + 1, 4))
    out[0] = s0
    x = s0[:2].copy()
    v = s0[2:].copy()
    for k in range(n):
        ax, ay = _accel(x, v, us[k], anchors, attachments, ratios, mass, damping, gravity)
        v[0] += dt * ax
        v[1] += dt * ay
        x[0] += dt * v[0]
        x[1] += dt * v[1]
        out[k + 1, 0] = x[0]
        out[k + 1, 1] = x[1]
        out[k + 1, 2] = v[0]
        out[k + 1, 3] = v[1]
    return out


@njit(cache=True)
def ilqg_stage_cost(xk, uk, u_prev, xd, vd, w_pos, w_vel, w_u, w_du, rho, u_lo, u_hi):
    c = 0.0
    c += w_pos * ((xk[0] - xd[0]) ** 2 + (xk[1] - xd[1]) ** 2)
    c += w_vel * ((xk[2] - vd[0]) ** 2 + (xk[3] - vd[1]) ** 2)
    for i in range(4):
        c += w_u * uk[i] * uk[i]
        d = uk[i] - u_prev[i]
        c += w_du * d * d
        if uk[i] > u_hi:
            c += rho * (uk[i] - u_hi) ** 2
        elif uk[i] < u_lo:
            c += rho * (u_lo - uk[i]) ** 2
    return c


@njit(cache=True)
def ilqg_rollout(
    s_bar, u_bar, K, kff, alpha,
    anchors, attachments, ratios, mass, damping, gravity, dt,
    xd, vd, w_pos, w_vel, w_u, w_du, rho, u_lo, u_hi, terminal_scale,
):
    """Closed-loop rollout of the augmented system [x, v, u_prev].

    Controls are applied unclamped during optimization; the box is
    enforced by the squared penalty (and by a final clamp in the caller
    once the solve has converged).  Returns (s, u, cost).
    """
    n = u_bar.shape[0]
    s = np.empty((n + 1, 8))
    u = np.empty((n, 4))
    s[0] = s_bar[0]
    cost = 0.0
    for k in range(n):
        uk = np.empty(4)
        for i in range(4):
            du = alpha * kff[k, i]
            for j in range(8):
                du += K[k, i, j] * (s[k, j] - s_bar[k, j])
            uk[i] = u_bar[k, i] + du
        u[k] = uk
        cost += ilqg_stage_cost(
            s[k, :4], uk, s[k, 4:], xd[k], vd[k], w_pos, w_vel, w_u, w_du, rho, u_lo, u_hi
        )
        ax, ay = _accel(s[k, :2], s[k, 2:4], uk, anchors, attachments, ratios, mass, damping, gravity)
        s[k + 1, 2] = s[k, 2] + dt * ax
        s[k + 1, 3] = s[k, 3] + dt * ay
        s[k + 1, 0] = s[k, 0] + dt * s[k + 1, 2]
        s[k + 1, 1] = s[k, 1] + dt * s[k + 1, 3]
        s[k + 1, 4:] = uk
    # terminal tracking cost
    c = 0.0
    c += w_pos * ((s[n, 0] - xd[n, 0]) ** 2 + (s[n, 1] - xd[n, 1]) ** 2)
    c += w_vel * ((s[n, 2] - vd[n, 0]) ** 2 + (s[n, 3] - vd[n, 1]) ** 2)
    cost += terminal_scale * c
    return s, u, cost


@njit(cache=True)
def ddp_backward(A, B, lx, lu, lxx, luu, lux, vx_f, vxx_f, reg):
    """Riccati sweep on the augmented system; du = kff + K ds.

    Returns (K, kff, dv1, dv2, ok); ok=False signals a non-PD control
    Hessian at the current regularization.
    """
    n = lu.shape[0]
    nx = lx.shape[1]
    nu = lu.shape[1]
    K = np.zeros((n, nu, nx))
    kff = np.zeros((n, nu))
    Vx = vx_f.copy()
    Vxx = vxx_f.copy()
    dv1 = 0.0
    dv2 = 0.0
    for k in range(n - 1, -1, -1):
        Ak = A[k]
        Bk = B[k]
        Qx = lx[k] + Ak.T @ Vx
        Qu = lu[k] + Bk.T @ Vx
        VxxA = Vxx @ Ak
        Qxx = lxx[k] + Ak.T @ VxxA
        Quu = luu[k] + Bk.T @ (Vxx @ Bk)
        Qux = lux[k] + Bk.T @ VxxA
        for i in range(nu):
            Quu[i, i] += reg
        w = np.linalg.eigvalsh(0.5 * (Quu + Quu.T))
        if w[0] <= 1e-12:
            return K, kff, dv1, dv2, False
        Kk = -np.linalg.solve(Quu, Qux)
        kk = -np.linalg.solve(Quu, Qu)
        K[k] = Kk
        kff[k] = kk
        dv1 += kk @ Qu
        dv2 += 0.5 * kk @ (Quu @ kk)
        Vx = Qx + Kk.T @ (Quu @ kk) + Kk.T @ Qu + Qux.T @ kk
        Vxx = Qxx + Kk.T @ (Quu @ Kk) + Kk.T @ Qux + Qux.T @ Kk
        Vxx = 0.5 * (Vxx + Vxx.T)
    return K, kff, dv1, dv2, True


@njit(cache=True)
def gt_winch_angle(length, base, thickness, layer_angle, zero_offset):
    """Invert the layered piecewise-linear winch (mirror of geometry)."""
    L = length - zero_offset
    r0 = base / 2.0
    if thickness == 0.0:
        return L / r0
    a = layer_angle * thickness / 2.0
    b = layer_angle * (r0 - thickness / 2.0)
    Lc = L if L > 0.0 else 0.0
    disc = b * b + 4.0 * a * Lc
    k = np.floor((-b + np.sqrt(disc)) / (2.0 * a))
    if k < 0.0:
        k = 0.0
    cum = layer_angle * (k * r0 + thickness * k * (k - 1.0) / 2.0)
    return k * layer_angle + (L - cum) / (r0 + k * thickness)


@njit(cache=True)
def closed_loop_advance(
    x, v, dx_prev, k0, n_steps, frozen,
    x_nom, u_nom, K, xK, zK, k_off, u_lo, u_hi,
    anchors_true, attachments, ratios, mass, damping, gravity, dt,
    noise_len, noise_vel, dist_force,
    gt_base, gt_thick, gt_layer_angle, gt_zero,
    p_calib,
):
    """Advance plant + executor n_steps from schedule index k0.

    When ``frozen`` the schedule index is held at k0 (soft-limit hold,
    thermal pause, refilling dip) while feedback continues on the frozen
    nominal.  Measurement synthesis runs through the layered true winch
    and back through the calibrated quadratic, so calibration error
    shows up exactly the way the real pipeline would see it.

    Returns (x, v, dx_prev, true_xy, est_xy, u_trace, deviation, clamped).
    """
    true_xy = np.empty((n_steps, 2))
    est_xy = np.empty((n_steps, 2))
    u_trace = np.empty((n_steps, 4))
    deviation = np.empty(n_steps)
    clamped = 0
    n_sched = x_nom.shape[0]
    z = np.empty(8)
    for step in range(n_steps):
        kk = k0 if frozen else k0 + step
        if kk >= n_sched:
            kk = n_sched - 1
        # --- measurement synthesis through the true plant ---
        for i in range(4):
            dxa = anchors_true[i, 0] - (x[0] + attachments[i, 0])
            dya = anchors_true[i, 1] - (x[1] + attachments[i, 1])
            dist = np.sqrt(dxa * dxa + dya * dya)
            if dist < 1e-12:
                dist = 1e-12
            ux = dxa / dist
            uy = dya / dist
            eff_len = ratios[i] * dist + noise_len[step, i]
            theta = gt_winch_angle(eff_len, gt_base[i], gt_thick[i], gt_layer_angle[i], gt_zero[i])
            z[i] = p_calib[i, 0] + p_calib[i, 1] * theta + p_calib[i, 2] * theta * theta
            eff_rate = -ratios[i] * (ux * v[0] + uy * v[1]) + noise_vel[step, i]
            z[4 + i] = eff_rate / ratios[i]
        # --- affine estimator + feedback (Eq-style executor) ---
        dx = np.empty(4)
        for i in range(4):
            acc = k_off[kk, i]
            for j in range(4):
                acc += xK[kk, i, j] * dx_prev[j]
            for j in range(8):
                acc += zK[kk, i, j] * z[j]
            dx[i] = acc
        dx_prev = dx
        u = np.empty(4)
        step_clamped = False
        for i in range(4):
            acc = u_nom[kk, i]
            for j in range(4):
                acc += K[kk, i, j] * dx[j]
            if acc < u_lo:
                acc = u_lo
                step_clamped = True
            elif acc > u_hi:
                acc = u_hi
                step_clamped = True
            u[i] = acc
        if step_clamped:
            clamped += 1
        # --- plant step ---
        ax, ay = _accel(x, v, u, anchors_true, attachments, ratios, mass, damping, gravity)
        ax += dist_force[step, 0] / mass
        ay += dist_force[step, 1] / mass
        v[0] += dt * ax
        v[1] += dt * ay
        x[0] += dt * v[0]
        x[1] += dt * v[1]
        true_xy[step, 0] = x[0]
        true_xy[step, 1] = x[1]
        est_xy[step, 0] = x_nom[kk, 0] + dx[0]
        est_xy[step, 1] = x_nom[kk, 1] + dx[1]
        u_trace[step] = u
        deviation[step] = np.sqrt(dx[0] * dx[0] + dx[1] * dx[1])
    return x, v, dx_prev, true_xy, est_xy, u_trace, deviation, clamped
