"""Sparse nonlinear least squares for the winch calibration problem.

Minimizes  sum_k || l(theta_k; p) - dist(A - (x_k + B)) ||^2  over the
quadratic winch coefficients p (3 per cable) and the per-sample platform
positions x_k jointly.  Each x_k touches only its own 4 residuals, so
the Levenberg-Marquardt normal equations are solved by eliminating the
position blocks (Schur complement onto the 12 winch parameters) -- one
dense 12x12 solve plus n independent 2x2 solves per iteration.

The joint variant adds weighted label residuals ||x_k - y_k||^2 for the
operator-measured samples, with the proprioceptive/exteroceptive weights
normalized by their element counts.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import CalibrationError, UnderdeterminedError
from ..geometry import RobotGeometry, WinchModel
from .datasets import CalibrationDataset

Array = np.ndarray


@dataclass
class CalibrationResult:
    model: WinchModel  # distance convention
    positions: Array  # (n, 2) recovered platform positions
    residual_rms: float  # m, unweighted
    theta_range: Array  # (4, 2) observed [min, max] per cable
    report: dict = field(default_factory=dict)


def _predict(theta: Array, p: Array) -> Array:
    """(n, 4) lengths from coefficients p (4, 3)."""
    return p[:, 0] + p[:, 1] * theta + p[:, 2] * theta * theta


def _cable_dists(anchors: Array, attachments: Array, x: Array):
    delta = anchors[None, :, :] - (x[:, None, :] + attachments[None, :, :])
    dist = np.maximum(np.linalg.norm(delta, axis=2), 1e-12)
    units = delta / dist[..., None]
    return dist, units


def batch_positions_from_lengths(
    geom: RobotGeometry, lengths: Array, x0: Array | None = None, iters: int = 30
) -> Array:
    """Vectorized Gauss-Newton: least-squares x_k from distance predictions."""
    n = lengths.shape[0]
    x = (
        np.tile([geom.frame_width / 2.0, geom.frame_height / 2.0], (n, 1))
        if x0 is None
        else x0.copy()
    )
    for _ in range(iters):
        dist, units = _cable_dists(geom.anchors, geom.attachments, x)
        r = lengths - dist  # (n, 4)
        J = units  # dr/dx = +unit, (n, 4, 2)
        g = np.einsum("nij,ni->nj", J, r)
        H = np.einsum("nij,nik->njk", J, J)
        H[:, 0, 0] += 1e-12
        H[:, 1, 1] += 1e-12
        det = H[:, 0, 0] * H[:, 1, 1] - H[:, 0, 1] * H[:, 1, 0]
        step = np.empty_like(x)
        step[:, 0] = -(H[:, 1, 1] * g[:, 0] - H[:, 0, 1] * g[:, 1]) / det
        step[:, 1] = -(-H[:, 1, 0] * g[:, 0] + H[:, 0, 0] * g[:, 1]) / det
        x = x + step
        if np.max(np.abs(step)) < 1e-13:
            break
    return x


def _solve(
    data: CalibrationDataset,
    geom: RobotGeometry,
    init: WinchModel,
    w_proprio: float,
    w_extero: float,
    max_iters: int,
    tol: float,
) -> CalibrationResult:
    theta = data.theta
    n = data.n
    anchors, attachments = geom.anchors, geom.attachments
    labeled = data.labeled_mask()
    n_lab = int(labeled.sum())
    use_labels = w_extero > 0 and n_lab > 0

    # weights normalized by element counts
    wp = w_proprio / (4 * n)
    we = (w_extero / (2 * n_lab)) if use_labels else 0.0

    p = init.to_distance(geom.routing_ratio).coeffs.copy()
    x = batch_positions_from_lengths(geom, _predict(theta, p))
    if use_labels:
        x[labeled] = data.labels[labeled]

    th_pow = np.stack([np.ones_like(theta), theta, theta * theta], axis=2)  # (n,4,3)

    def cost_of(p_c, x_c):
        dist, _ = _cable_dists(anchors, attachments, x_c)
        r = _predict(theta, p_c) - dist
        c = wp * float(np.sum(r * r))
        if use_labels:
            d = x_c[labeled] - data.labels[labeled]
            c += we * float(np.sum(d * d))
        return c

    def normal_blocks(p_c, x_c):
        """Weighted Gauss-Newton blocks at (p, x); Jp rows for cable i
        touch only p[i] with [1, th, th^2]."""
        dist, units = _cable_dists(anchors, attachments, x_c)
        r = _predict(theta, p_c) - dist  # (n, 4)
        App = np.zeros((12, 12))
        gp = np.zeros(12)
        for i in range(4):
            Ti = th_pow[:, i, :]  # (n, 3)
            sl = slice(3 * i, 3 * i + 3)
            App[sl, sl] = wp * Ti.T @ Ti
            gp[sl] = wp * Ti.T @ r[:, i]
        B = np.zeros((n, 12, 2))  # B_k = Jp_k^T Jx_k
        for i in range(4):
            B[:, 3 * i : 3 * i + 3, :] = wp * th_pow[:, i, :, None] * units[:, i, None, :]
        C = wp * np.einsum("nij,nik->njk", units, units)  # (n, 2, 2)
        gx = wp * np.einsum("nij,ni->nj", units, r)
        if use_labels:
            d = x_c[labeled] - data.labels[labeled]
            C[labeled, 0, 0] += we
            C[labeled, 1, 1] += we
            gx[labeled] += we * d
        return App, gp, B, C, gx

    lam = 1e-6
    cost = cost_of(p, x)
    iterations = 0
    converged = False
    for iterations in range(1, max_iters + 1):
        App, gp, B, C, gx = normal_blocks(p, x)
        cost_before = cost
        accepted = False
        for _ in range(12):
            App_d = App + lam * np.diag(np.maximum(np.diag(App), 1e-12))
            C_d = C.copy()
            C_d[:, 0, 0] += lam * np.maximum(C[:, 0, 0], 1e-12)
            C_d[:, 1, 1] += lam * np.maximum(C[:, 1, 1], 1e-12)
            det = C_d[:, 0, 0] * C_d[:, 1, 1] - C_d[:, 0, 1] * C_d[:, 1, 0]
            Cinv = np.empty_like(C_d)
            Cinv[:, 0, 0] = C_d[:, 1, 1] / det
            Cinv[:, 1, 1] = C_d[:, 0, 0] / det
            Cinv[:, 0, 1] = -C_d[:, 0, 1] / det
            Cinv[:, 1, 0] = -C_d[:, 1, 0] / det

            S = App_d - np.einsum("nij,njk,nlk->il", B, Cinv, B)
            rhs = gp - np.einsum("nij,njk,nk->i", B, Cinv, gx)
            try:
                dp = np.linalg.solve(S, -rhs)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            dx = -np.einsum("njk,nk->nj", Cinv, gx + np.einsum("nij,i->nj", B, dp))
            p_new = p + dp.reshape(4, 3)
            x_new = x + dx
            c_new = cost_of(p_new, x_new)
            if c_new < cost:
                p, x, cost = p_new, x_new, c_new
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                break
            lam *= 10
        if not accepted:
            converged = True  # no descent left at any damping
            break
        if (cost_before - cost) < tol * max(1.0, cost):
            converged = True
            break

    if not converged:
        raise CalibrationError(
            f"LM did not converge in {max_iters} iterations (cost {cost:.3e})"
        )

    # rank check on the undamped reduced system at the solution; the
    # [1, th, th^2] columns span wildly different scales, so test the
    # diagonally-scaled system instead of the raw one
    App, gp, B, C, gx = normal_blocks(p, x)
    Cinv0 = np.linalg.inv(C + 1e-15 * np.eye(2)[None])
    S_undamped = App - np.einsum("nij,njk,nlk->il", B, Cinv0, B)
    d = np.sqrt(np.maximum(np.diag(S_undamped), 1e-300))
    S_scaled = S_undamped / d[:, None] / d[None, :]
    evals, evecs = np.linalg.eigh(S_scaled)
    if evals[0] < 1e-10:
        names = []
        v = evecs[:, 0]
        for idx in np.argsort(-np.abs(v))[:3]:
            names.append(f"cable {idx // 3} p{idx % 3} ({v[idx]:+.2f})")
        raise UnderdeterminedError(
            "insufficient excitation; null direction ~ " + ", ".join(names),
            null_directions=evecs[:, evals < 1e-10],
        )

    dist, _ = _cable_dists(anchors, attachments, x)
    r = _predict(theta, p) - dist
    rms = float(np.sqrt(np.mean(r * r)))
    th_range = np.stack([theta.min(axis=0), theta.max(axis=0)], axis=1)
    model = WinchModel(p, convention="distance")
    report = {
        "iterations": iterations,
        "final_cost": cost,
        "converged": converged,
        "monotone": bool(model.monotone_over(th_range[:, 0].min(), th_range[:, 1].max())),
    }
    return CalibrationResult(model, x, rms, th_range, report)


def solve_proprioceptive(
    data: CalibrationDataset,
    geom: RobotGeometry,
    init: WinchModel,
    max_iters: int = 200,
    tol: float = 1e-10,
) -> CalibrationResult:
    """Winch coefficients + platform path from recorded angles alone.

    ``init`` follows the standard initialization rule: p2 = 0, p1 from
    the nominal winch radius, p0 from measured initial cable lengths.
    Rejects solutions whose payout stops being monotone over the
    observed angle range.
    """
    result = _solve(data, geom, init, 1.0, 0.0, max_iters, tol)
    if not result.report["monotone"]:
        raise CalibrationError(
            "calibration produced non-monotone payout over the observed range"
        )
    return result


def solve_joint(
    data: CalibrationDataset,
    geom: RobotGeometry,
    init: WinchModel,
    w_proprio: float = 0.94,
    w_extero: float = 0.06,
    max_iters: int = 200,
    tol: float = 1e-10,
) -> CalibrationResult:
    """Weighted joint proprioceptive + exteroceptive solve.

    Label residuals anchor the labeled samples' positions; the default
    94%/6% split is the working point past which heavier exteroceptive
    weights are known to push winch parameters into unsafe territory,
    so a non-monotone result warns instead of raising.
    """
    if w_extero > 0:
        n_lab = int(data.labeled_mask().sum())
        if n_lab < 4:
            raise CalibrationError(f"joint solve needs >= 4 labeled samples, got {n_lab}")
    result = _solve(data, geom, init, w_proprio, w_extero, max_iters, tol)
    if not result.report["monotone"]:
        warnings.warn(
            "exteroceptive weight drove winch parameters outside monotone-payout bounds",
            stacklevel=2,
        )
    return result
