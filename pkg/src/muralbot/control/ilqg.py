"""Offline nominal trajectory optimization (iterative LQG).

Solves the tracking QP -- quadratic state error and control cost, the
plant model as equality constraints, tension box limits -- by repeated
linearize / Riccati-sweep / line-searched rollout.  The banded problem
structure makes every iteration linear in the horizon.

Control smoothness couples consecutive controls, so the solver works on
an augmented state [x, v, u_prev] (dim 8) internally; callers only ever
see the 4-state nominal.  Box limits are handled with a squared penalty
whose weight doubles until the converged nominal is feasible, plus a
final hard clamp (which is a no-op whenever the penalty has done its
job).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..errors import InfeasibleError, SynthesisError
from .linearize import PlantModel, dynamics_jacobians
from .manual import TensionLimits, distribute_tensions, wrench_matrix

Array = np.ndarray

NS = 8  # augmented state
NU = 4


@dataclass(frozen=True)
class CostWeights:
    """Stage cost weights (configuration, not measured values)."""

    position: float = 1e4  # per m^2
    velocity: float = 1e1  # per (m/s)^2
    effort: float = 1e-3  # per N^2
    smoothness: float = 1e-2  # per N^2 of control step
    # stand-in for the beyond-horizon value function; large enough that
    # the solver cannot profitably let the platform drop near the end
    terminal_scale: float = 500.0


@dataclass
class SolveReport:
    iterations: int = 0
    cost_trace: list = field(default_factory=list)
    penalty_rounds: int = 0
    converged: bool = False
    final_cost: float = float("nan")
    max_limit_violation: float = 0.0


@dataclass(frozen=True)
class NominalTrajectory:
    """Solver output: states (n+1, 4), controls (n, 4), dt."""

    states: Array
    controls: Array
    dt: float
    report: SolveReport


def _desired_velocities(positions: Array, dt: float) -> Array:
    v = np.gradient(positions, dt, axis=0)
    return v


def _initial_controls(model: PlantModel, positions: Array, limits: TensionLimits) -> Array:
    """Minimum-norm gravity-balance tensions at each desired point (warm start)."""
    n = positions.shape[0] - 1
    us = np.empty((n, NU))
    f = np.array([0.0, model.mass * model.gravity])
    for k in range(n):
        W = wrench_matrix(model.geom, positions[k])
        u, _ = distribute_tensions(W, f, limits, u_ref=0.0)
        us[k] = u
    return us


def _cost_derivatives(
    s: Array, u: Array, xd: Array, vd: Array, w: CostWeights, rho: float,
    limits: TensionLimits,
):
    """Batched gradients/Hessians of the stage cost for the backward pass."""
    n = u.shape[0]
    lx = np.zeros((n, NS))
    lu = np.zeros((n, NU))
    lxx = np.zeros((n, NS, NS))
    luu = np.zeros((n, NU, NU))
    lux = np.zeros((n, NU, NS))

    ex = s[:n, 0:2] - xd[:n]
    ev = s[:n, 2:4] - vd[:n]
    du = u - s[:n, 4:8]

    lx[:, 0:2] = 2 * w.position * ex
    lx[:, 2:4] = 2 * w.velocity * ev
    lx[:, 4:8] = -2 * w.smoothness * du
    lu[:] = 2 * w.effort * u + 2 * w.smoothness * du

    for i in range(2):
        lxx[:, i, i] = 2 * w.position
        lxx[:, 2 + i, 2 + i] = 2 * w.velocity
    for i in range(4):
        lxx[:, 4 + i, 4 + i] = 2 * w.smoothness
        luu[:, i, i] = 2 * (w.effort + w.smoothness)
        lux[:, i, 4 + i] = -2 * w.smoothness

    over = u > limits.u_max
    under = u < limits.u_min
    lu += 2 * rho * (np.where(over, u - limits.u_max, 0.0) - np.where(under, limits.u_min - u, 0.0))
    pen_hess = 2 * rho * (over | under)
    for i in range(4):
        luu[:, i, i] += pen_hess[:, i]
    return lx, lu, lxx, luu, lux


def _augmented_jacobians(model: PlantModel, s: Array, u: Array):
    A4, B4 = dynamics_jacobians(model, s[:-1, :4], u)
    n = u.shape[0]
    A = np.zeros((n, NS, NS))
    B = np.zeros((n, NS, NU))
    A[:, :4, :4] = A4
    B[:, :4, :] = B4
    B[:, 4:, :] = np.eye(NU)[None]
    return A, B


def solve_nominal(
    model: PlantModel,
    desired_positions: Array,
    limits: TensionLimits,
    weights: CostWeights | None = None,
    initial_state: Array | None = None,
    max_iters: int = 120,
    tol: float = 1e-9,
    penalty_rounds: int = 16,
    feasibility_tol: float = 1e-3,
) -> NominalTrajectory:
    """Solve for the optimal nominal {x*, u*} tracking ``desired_positions``.

    desired_positions: (n+1, 2) at the model's dt (retimed upstream, so
    the reference is dynamically feasible).  Raises SynthesisError when
    the iterate stops improving before reaching the tolerance, and
    InfeasibleError for nonsensical limits.
    """
    if desired_positions.shape[0] < 2:
        raise InfeasibleError("horizon must be >= 2 samples")
    weights = weights or CostWeights()
    geom = model.geom
    dt = model.dt
    xd = np.asarray(desired_positions, dtype=float)
    vd = _desired_velocities(xd, dt)
    n = xd.shape[0] - 1

    if initial_state is None:
        initial_state = np.concatenate([xd[0], vd[0]])
    u0 = _initial_controls(model, xd, limits)

    args = (
        geom.anchors, geom.attachments, geom.routing_ratio,
        model.mass, model.damping, model.gravity, dt,
    )

    s0 = np.concatenate([initial_state, u0[0]])
    s_bar = np.empty((n + 1, NS))
    s_bar[0] = s0
    # initial rollout with zero feedback
    zeroK = np.zeros((n, NU, NS))
    rho = 0.0
    s_bar, u_bar, cost = kernels.ilqg_rollout(
        np.repeat(s0[None, :], n + 1, axis=0), u0, zeroK, np.zeros((n, NU)), 0.0,
        *args, xd, vd,
        weights.position, weights.velocity, weights.effort, weights.smoothness,
        rho, limits.u_min, limits.u_max, weights.terminal_scale,
    )

    report = SolveReport()
    rho = 1.0
    alphas = 0.5 ** np.arange(0, 8)

    for round_idx in range(penalty_rounds):
        report.penalty_rounds = round_idx + 1
        reg = 1e-8
        if round_idx > 0:
            # re-price the incumbent under the doubled penalty weight
            s_bar, u_bar, cost = kernels.ilqg_rollout(
                s_bar, u_bar, zeroK, np.zeros((n, NU)), 0.0, *args, xd, vd,
                weights.position, weights.velocity, weights.effort,
                weights.smoothness, rho, limits.u_min, limits.u_max,
                weights.terminal_scale,
            )
        round_costs = [cost]
        inner_converged = False
        for _ in range(max_iters):
            report.iterations += 1
            A, B = _augmented_jacobians(model, s_bar, u_bar)
            lx, lu, lxx, luu, lux = _cost_derivatives(
                s_bar, u_bar, xd, vd, weights, rho, limits
            )
            vx_f = np.zeros(NS)
            vxx_f = np.zeros((NS, NS))
            ex = s_bar[n, 0:2] - xd[n]
            ev = s_bar[n, 2:4] - vd[n]
            vx_f[0:2] = 2 * weights.terminal_scale * weights.position * ex
            vx_f[2:4] = 2 * weights.terminal_scale * weights.velocity * ev
            for i in range(2):
                vxx_f[i, i] = 2 * weights.terminal_scale * weights.position
                vxx_f[2 + i, 2 + i] = 2 * weights.terminal_scale * weights.velocity

            K = kff = None
            for _ in range(12):
                K, kff, dv1, dv2, ok = kernels.ddp_backward(
                    A, B, lx, lu, lxx, luu, lux, vx_f, vxx_f, reg
                )
                if ok:
                    break
                reg = max(reg * 10.0, 1e-6)
            else:
                raise SynthesisError("backward pass never became positive definite")

            improved = False
            for alpha in alphas:
                s_new, u_new, cost_new = kernels.ilqg_rollout(
                    s_bar, u_bar, K, kff, alpha, *args, xd, vd,
                    weights.position, weights.velocity, weights.effort,
                    weights.smoothness, rho, limits.u_min, limits.u_max,
                    weights.terminal_scale,
                )
                if cost_new < cost - 1e-12:
                    s_bar, u_bar, cost = s_new, u_new, cost_new
                    improved = True
                    reg = max(reg / 5.0, 1e-10)
                    break
            round_costs.append(cost)
            if improved and (round_costs[-2] - cost) < tol * max(1.0, cost):
                inner_converged = True
                break
            if not improved:
                reg *= 10.0
                if reg > 1e8:
                    inner_converged = True  # no descent direction left
                    break

        report.cost_trace.append(round_costs)
        if not inner_converged:
            raise SynthesisError(
                f"iLQG did not converge in {max_iters} iterations "
                f"(final cost {cost:.6e}, last decrease "
                f"{round_costs[-2] - round_costs[-1]:.3e})"
            )
        violation = max(
            float(np.max(u_bar - limits.u_max, initial=0.0)),
            float(np.max(limits.u_min - u_bar, initial=0.0)),
        )
        report.max_limit_violation = violation
        if violation <= feasibility_tol:
            report.converged = True
            break
        rho *= 2.0
    else:
        raise SynthesisError(
            f"nominal stayed infeasible after {penalty_rounds} penalty rounds "
            f"(violation {report.max_limit_violation:.3e} N, cost {cost:.6e})"
        )

    # final hard clamp; re-roll the state trajectory if it changed anything
    u_star = np.clip(u_bar, limits.u_min, limits.u_max)
    if not np.array_equal(u_star, u_bar):
        states = kernels.plant_rollout(s_bar[0, :4], u_star, *args[:-1], dt)
    else:
        states = s_bar[:, :4].copy()
    report.final_cost = float(cost)
    return NominalTrajectory(states=states, controls=u_star, dt=dt, report=report)
