"""Analytic linearization of the platform dynamics and cable measurements.

State: [x, y, vx, vy].  Control: 4 cable tensions.  Measurement: 8-vector
[d_1..d_4, ddot_1..ddot_4] in the *distance* convention (anchor distance
per cable, not paid-out cable); the executor converts encoder angles into
this space through the calibrated winch model, which keeps the routing
ratio out of the measurement matrix.

Discretization matches the simulator's semi-implicit Euler step exactly,
which is what makes the finite-difference linearization checks tight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import RobotGeometry

Array = np.ndarray

NX = 4
NU = 4
NZ = 8


@dataclass(frozen=True)
class PlantModel:
    """The controller's model of the plant (geometry + rigid-body params)."""

    geom: RobotGeometry
    mass: float
    damping: float
    gravity: float = 9.81
    dt: float = 0.001

    def acceleration(self, x: Array, v: Array, u: Array) -> Array:
        delta = self.geom.anchors - (x[None, :] + self.geom.attachments)
        dist = np.maximum(np.linalg.norm(delta, axis=1), 1e-12)
        units = delta / dist[:, None]
        force = (self.geom.routing_ratio * u) @ units
        return (
            force / self.mass
            + np.array([0.0, -self.gravity])
            - (self.damping / self.mass) * v
        )

    def step(self, state: Array, u: Array) -> Array:
        """Semi-implicit Euler on the 4-state [x, y, vx, vy]."""
        x, v = state[:2], state[2:]
        a = self.acceleration(x, v, u)
        v_new = v + self.dt * a
        x_new = x + self.dt * v_new
        return np.concatenate([x_new, v_new])

    def measure(self, state: Array) -> Array:
        """Noise-free measurement h(state) in distance convention."""
        x, v = state[:2], state[2:]
        delta = self.geom.anchors - (x[None, :] + self.geom.attachments)
        dist = np.maximum(np.linalg.norm(delta, axis=1), 1e-12)
        units = delta / dist[:, None]
        return np.concatenate([dist, -(units @ v)])


@dataclass(frozen=True)
class LinearizedModel:
    """Per-timestep linearization around a nominal trajectory.

    A: (n, 4, 4), B: (n, 4, 4), H: (n, 8, 4); Q, R are the process and
    measurement noise covariances used by the estimator synthesis.
    """

    A: Array
    B: Array
    H: Array
    Q: Array
    R: Array
    dt: float

    def __post_init__(self):
        n = self.A.shape[0]
        if self.A.shape != (n, NX, NX) or self.B.shape != (n, NX, NU):
            raise ValueError("A/B dimensions inconsistent")
        if self.H.shape != (n, NZ, NX):
            raise ValueError("H dimensions inconsistent")
        for M, name in ((self.Q, "Q"), (self.R, "R")):
            if not np.allclose(M, M.T):
                raise ValueError(f"{name} must be symmetric")
            if np.any(np.linalg.eigvalsh(M) <= 0):
                raise ValueError(f"{name} must be positive definite")

    @property
    def horizon(self) -> int:
        return self.A.shape[0]


def _cable_terms(geom: RobotGeometry, xs: Array):
    """Batched distances and unit vectors for positions xs (n, 2)."""
    delta = geom.anchors[None, :, :] - (xs[:, None, :] + geom.attachments[None, :, :])
    dist = np.maximum(np.linalg.norm(delta, axis=2), 1e-12)  # (n, 4)
    units = delta / dist[..., None]  # (n, 4, 2)
    return dist, units


def dynamics_jacobians(model: PlantModel, xs: Array, us: Array) -> tuple[Array, Array]:
    """Batched discrete A_k, B_k at states xs (n, 4) and controls us (n, 4)."""
    n = xs.shape[0]
    geom = model.geom
    dt = model.dt
    dist, units = _cable_terms(geom, xs[:, :2])
    r = geom.routing_ratio

    # d a / d x = -(1/m) sum_i r_i u_i (I - d d^T) / dist_i
    eye2 = np.eye(2)
    ddT = units[..., :, None] * units[..., None, :]  # (n, 4, 2, 2)
    proj = (eye2[None, None] - ddT) / dist[..., None, None]
    ax = -(np.sum((r[None, :] * us)[..., None, None] * proj, axis=1)) / model.mass
    av = -(model.damping / model.mass) * eye2
    au = (r[None, :, None] * units) / model.mass  # (n, 4, 2)
    au = np.transpose(au, (0, 2, 1))  # (n, 2, 4)

    A = np.zeros((n, NX, NX))
    A[:, :2, :2] = eye2 + dt * dt * ax
    A[:, :2, 2:] = dt * eye2 + dt * dt * av
    A[:, 2:, :2] = dt * ax
    A[:, 2:, 2:] = eye2 + dt * av

    B = np.zeros((n, NX, NU))
    B[:, :2, :] = dt * dt * au
    B[:, 2:, :] = dt * au
    return A, B


def measurement_jacobians(geom: RobotGeometry, xs: Array) -> Array:
    """Batched H_k (n, 8, 4) at states xs (n, 4)."""
    n = xs.shape[0]
    dist, units = _cable_terms(geom, xs[:, :2])
    vs = xs[:, 2:]

    H = np.zeros((n, NZ, NX))
    # d dist_i / d x = -unit_i
    H[:, :4, :2] = -units
    # ddot_i = -unit_i . v;  d/dv = -unit_i;  d/dx = v^T (I - d d^T)/dist
    H[:, 4:, 2:] = -units
    ddT = units[..., :, None] * units[..., None, :]
    proj = (np.eye(2)[None, None] - ddT) / dist[..., None, None]  # (n,4,2,2)
    H[:, 4:, :2] = np.einsum("nj,nijk->nik", vs, proj)
    return H


def nominal_measurements(geom: RobotGeometry, xs: Array) -> Array:
    """Batched z*_k (n, 8) at nominal states xs (n, 4)."""
    dist, units = _cable_terms(geom, xs[:, :2])
    rates = -np.einsum("nij,nj->ni", units, xs[:, 2:])
    return np.concatenate([dist, rates], axis=1)


def linearize_trajectory(
    model: PlantModel,
    xs: Array,
    us: Array,
    Q: Array,
    R: Array,
) -> LinearizedModel:
    """Linearized model along a nominal (xs has one more row than us)."""
    A, B = dynamics_jacobians(model, xs[:-1], us)
    H = measurement_jacobians(model.geom, xs[:-1])
    return LinearizedModel(A=A, B=B, H=H, Q=Q, R=R, dt=model.dt)
