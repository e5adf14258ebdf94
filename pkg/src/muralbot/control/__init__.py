"""Offline gain synthesis and the online executor for trajectory tracking,
plus the manual-mode controllers and deviation safety limits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimator import AffineEstimatorGains, estimator_precompute
from .ilqg import CostWeights, NominalTrajectory, solve_nominal
from .linearize import (
    LinearizedModel,
    PlantModel,
    dynamics_jacobians,
    linearize_trajectory,
    measurement_jacobians,
    nominal_measurements,
)
from .lqr import lqr_backward_pass
from .manual import (
    PidGains,
    PidState,
    TensionLimits,
    distribute_tensions,
    dual_space_pid,
    gravity_compensation,
    wrench_matrix,
)
from .safety import HARD_LIMIT_M, SOFT_LIMIT_M, SafetyState, safety_monitor
from .schedule import (
    GainSchedule,
    dump_schedule_text,
    load_schedule,
    online_step,
    save_schedule,
)

Array = np.ndarray


@dataclass(frozen=True)
class NoiseModel:
    """Covariances for estimator synthesis (configuration; the defaults
    track the simulator's default noise settings)."""

    process_position_var: float = 1e-12
    process_velocity_var: float = 2e-9
    length_noise_std: float = 1e-3  # m, effective-length space
    velocity_noise_std: float = 1e-3  # m/s, effective-length space

    def Q(self) -> Array:
        return np.diag(
            [self.process_position_var] * 2 + [self.process_velocity_var] * 2
        )

    def R(self, routing_ratio: Array) -> Array:
        # the executor divides effective-length channels by the routing
        # ratio, which scales their noise the same way
        r = np.asarray(routing_ratio, dtype=float)
        var_len = (self.length_noise_std / r) ** 2
        var_vel = (self.velocity_noise_std / r) ** 2
        return np.diag(np.concatenate([var_len, var_vel]))


def synthesize_schedule(
    model: PlantModel,
    nominal: NominalTrajectory,
    limits: TensionLimits,
    weights: CostWeights | None = None,
    noise: NoiseModel | None = None,
    P0: Array | None = None,
) -> GainSchedule:
    """Nominal trajectory -> full executor schedule.

    Linearizes the 4-state model along the nominal, runs the LQR
    backward pass for feedback gains, then the forward covariance
    recursion for the collapsed affine estimator (with the feedback law
    folded into the estimate propagation).
    """
    weights = weights or CostWeights()
    noise = noise or NoiseModel()
    xs, us = nominal.states, nominal.controls
    A, B = dynamics_jacobians(model, xs[:-1], us)
    Qc = np.diag([weights.position] * 2 + [weights.velocity] * 2)
    Rc = np.diag([weights.effort] * 4)
    # terminal cost = stationary Riccati solution at the final
    # linearization, so gains near (and past) the end of the schedule
    # hold position as strongly as the interior ones
    try:
        from scipy.linalg import solve_discrete_are

        Qf = solve_discrete_are(A[-1], B[-1], Qc, Rc)
    except Exception:
        Qf = weights.terminal_scale * Qc
    K = lqr_backward_pass(A, B, Qc, Rc, Qf=Qf)
    H = measurement_jacobians(model.geom, xs[:-1])
    z_nom = nominal_measurements(model.geom, xs[:-1])
    lin = LinearizedModel(
        A=A, B=B, H=H, Q=noise.Q(), R=noise.R(model.geom.routing_ratio), dt=model.dt
    )
    est = estimator_precompute(lin, z_nom, control_gains=K, P0=P0)
    return GainSchedule(
        x_nom=xs[:-1].copy(),
        u_nom=us.copy(),
        z_nom=z_nom,
        K=K,
        xK=est.xK,
        zK=est.zK,
        k=est.k,
        dt=model.dt,
        limits=limits,
    )
