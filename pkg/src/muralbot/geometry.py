"""Planar cable robot geometry, winch models, and routing sensitivity.

Conventions used throughout the package:

* World frame: x right, y up, origin at the frame's lower-left anchor.
  All lengths in meters, angles in radians.
* Corner ordering for anchors and platform attachments is
  [lower-left, lower-right, upper-left, upper-right]; the two upper
  cables are the ones typically routed 2:1.
* ``distance`` is the straight-line anchor-to-attachment distance;
  ``effective length`` is routing_ratio * distance, i.e. the cable the
  winch actually has to pay out.

Winch models come in the same two conventions.  A *payout* model maps
shaft angle to effective length; a *distance* model (what the
calibration solver returns, where the routing factor is absorbed into
the coefficients) maps shaft angle directly to anchor distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import configio
from .errors import EstimationError, SingularConfigurationError, WorkspaceError

Array = np.ndarray

_RECT_TOL = 1e-6


def _check_rectangle(pts: Array, name: str) -> None:
    """Validate 4 points as a non-degenerate rectangle in corner order."""
    d1 = pts[1] - pts[0]  # lower edge
    d2 = pts[2] - pts[0]  # left edge
    scale = max(np.linalg.norm(d1), np.linalg.norm(d2))
    if scale <= 0.0:
        raise ValueError(f"{name}: degenerate rectangle (zero extent)")
    if np.linalg.norm(d1) < _RECT_TOL * scale or np.linalg.norm(d2) < _RECT_TOL * scale:
        raise ValueError(f"{name}: degenerate rectangle (collapsed edge)")
    if abs(np.dot(d1, d2)) > _RECT_TOL * scale * scale:
        raise ValueError(f"{name}: corners are not perpendicular")
    if np.linalg.norm((pts[0] + pts[3]) - (pts[1] + pts[2])) > _RECT_TOL * scale:
        raise ValueError(f"{name}: diagonals do not bisect (not a rectangle)")


@dataclass(frozen=True)
class RobotGeometry:
    """As-designed frame and platform geometry.

    anchors: (4, 2) base pulley positions, world frame [m].
    attachments: (4, 2) platform mount points, platform frame [m],
        same corner ordering as anchors.
    routing_ratio: (4,) ints in {1, 2}; 2 marks a platform-pulley cable
        with doubled force and halved displacement per unit payout.
    winch_nominal_diameter: (4,) drum diameters [m].
    """

    anchors: Array
    attachments: Array
    routing_ratio: Array
    winch_nominal_diameter: Array
    frame_width: float
    frame_height: float
    workspace_margin: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "anchors", np.asarray(self.anchors, dtype=float))
        object.__setattr__(self, "attachments", np.asarray(self.attachments, dtype=float))
        object.__setattr__(self, "routing_ratio", np.asarray(self.routing_ratio, dtype=float))
        object.__setattr__(
            self, "winch_nominal_diameter", np.asarray(self.winch_nominal_diameter, dtype=float)
        )
        if self.anchors.shape != (4, 2) or self.attachments.shape != (4, 2):
            raise ValueError("anchors and attachments must be (4, 2) arrays")
        _check_rectangle(self.anchors, "anchors")
        # all-coincident attachments (a point platform) are a valid limit case
        if np.ptp(self.attachments, axis=0).max() > 0:
            _check_rectangle(self.attachments, "attachments")
        # Same corner ordering: matching edges must point the same way.
        for a_edge, b_edge in (((0, 1), (0, 1)), ((0, 2), (0, 2))):
            da = self.anchors[a_edge[1]] - self.anchors[a_edge[0]]
            db = self.attachments[b_edge[1]] - self.attachments[b_edge[0]]
            if np.linalg.norm(db) > 0 and np.dot(da, db) < 0:
                raise ValueError("attachments do not share the anchors' corner ordering")
        if not np.all(np.isin(self.routing_ratio, (1, 2))):
            raise ValueError("routing_ratio entries must be 1 or 2")
        if np.any(self.winch_nominal_diameter <= 0):
            raise ValueError("winch diameters must be positive")
        if self.frame_width <= 0 or self.frame_height <= 0:
            raise ValueError("frame dimensions must be positive")

    def workspace_bounds(self) -> tuple[Array, Array]:
        """(lo, hi) of the admissible command region, margin applied."""
        m = self.workspace_margin
        return np.array([m, m]), np.array([self.frame_width - m, self.frame_height - m])

    def contains(self, x: Array, margin: float | None = None) -> bool:
        m = self.workspace_margin if margin is None else margin
        x = np.asarray(x, dtype=float)
        return bool(
            (x[0] >= m)
            and (x[0] <= self.frame_width - m)
            and (x[1] >= m)
            and (x[1] <= self.frame_height - m)
        )


@dataclass(frozen=True)
class WinchModel:
    """Quadratic shaft-angle-to-length model, one coefficient row per cable.

    coeffs: (4, 3) rows [c0 (m), c1 (m/rad), c2 (m/rad^2)].
    convention: "payout" when the model predicts effective length,
        "distance" when the routing factor is absorbed into the
        coefficients (calibration output).
    """

    coeffs: Array
    convention: str = "payout"

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float))
        if self.coeffs.shape != (4, 3):
            raise ValueError("coeffs must be (4, 3)")
        if self.convention not in ("payout", "distance"):
            raise ValueError(f"unknown convention {self.convention!r}")

    def length(self, theta, cable: int | None = None):
        """Evaluate c0 + c1*theta + c2*theta^2 (vectorized over theta)."""
        if cable is None:
            th = np.asarray(theta, dtype=float)
            c = self.coeffs
            return c[:, 0] + c[:, 1] * th + c[:, 2] * th * th
        c = self.coeffs[cable]
        return c[0] + c[1] * theta + c[2] * theta * theta

    def slope(self, theta, cable: int | None = None):
        """d length / d theta, used for velocity mapping."""
        if cable is None:
            th = np.asarray(theta, dtype=float)
            return self.coeffs[:, 1] + 2.0 * self.coeffs[:, 2] * th
        c = self.coeffs[cable]
        return c[1] + 2.0 * c[2] * theta

    def angle_for_length(self, length, cable: int):
        """Invert the quadratic on the increasing branch (slope > 0)."""
        c0, c1, c2 = self.coeffs[cable]
        if abs(c2) < 1e-15:
            return (length - c0) / c1
        disc = c1 * c1 - 4.0 * c2 * (c0 - length)
        disc = np.maximum(disc, 0.0)
        return (-c1 + np.sqrt(disc)) / (2.0 * c2)

    def monotone_over(self, theta_lo: float, theta_hi: float) -> bool:
        """True when slope stays positive across the given angle range."""
        # slope is linear in theta, so checking the endpoints suffices
        lo = self.slope(theta_lo)
        hi = self.slope(theta_hi)
        return bool(np.all((lo > 0) & (hi > 0)))

    def to_distance(self, routing_ratio: Array) -> "WinchModel":
        if self.convention == "distance":
            return self
        r = np.asarray(routing_ratio, dtype=float)[:, None]
        return WinchModel(self.coeffs / r, convention="distance")

    def to_payout(self, routing_ratio: Array) -> "WinchModel":
        if self.convention == "payout":
            return self
        r = np.asarray(routing_ratio, dtype=float)[:, None]
        return WinchModel(self.coeffs * r, convention="payout")


@dataclass(frozen=True)
class GroundTruthWinch:
    """Layered-drum winch: piecewise-linear length vs shaft angle.

    Slope within layer k is base_diameter/2 + k*cable_thickness (the
    effective radius grows by one cable thickness per layer); each layer
    spans wraps_per_layer full turns.  zero_offset is the cable already
    paid out at theta = 0.
    """

    base_diameter: float
    cable_thickness: float
    wraps_per_layer: int
    zero_offset: float = 0.0

    def __post_init__(self):
        if self.base_diameter <= 0 or self.wraps_per_layer <= 0 or self.cable_thickness < 0:
            raise ValueError("invalid ground-truth winch parameters")

    @property
    def layer_angle(self) -> float:
        return 2.0 * np.pi * self.wraps_per_layer

    def layer_of(self, theta):
        th = np.maximum(np.asarray(theta, dtype=float), 0.0)
        return np.floor(th / self.layer_angle).astype(int)

    def slope(self, theta):
        return self.base_diameter / 2.0 + self.layer_of(theta) * self.cable_thickness

    def length(self, theta):
        """Paid-out length at shaft angle theta (theta < 0 uses layer 0)."""
        th = np.asarray(theta, dtype=float)
        dth = self.layer_angle
        k = np.floor(np.maximum(th, 0.0) / dth)
        base = self.base_diameter / 2.0
        t = self.cable_thickness
        # cumulative length of the k completed layers, closed form
        completed = dth * (k * base + t * k * (k - 1.0) / 2.0)
        partial = (base + k * t) * (th - k * dth)
        return self.zero_offset + completed + partial

    def angle_for_length(self, length):
        """Inverse of length(); exact on the piecewise-linear curve."""
        L = np.asarray(length, dtype=float) - self.zero_offset
        dth = self.layer_angle
        base = self.base_diameter / 2.0
        t = self.cable_thickness
        # boundary k satisfies cum(k) <= L; cum is quadratic in k
        if t == 0.0:
            return L / base
        # solve dth*(k*base + t*k*(k-1)/2) = L for real k, floor it
        a = dth * t / 2.0
        b = dth * (base - t / 2.0)
        disc = b * b + 4.0 * a * np.maximum(L, 0.0)
        k = np.floor((-b + np.sqrt(disc)) / (2.0 * a))
        k = np.maximum(k, 0.0)
        cum = dth * (k * base + t * k * (k - 1.0) / 2.0)
        return k * dth + (L - cum) / (base + k * t)


@dataclass
class PlatformState:
    """Planar platform state; orientation is fixed identity by design."""

    position: Array
    velocity: Array = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).copy()
        self.velocity = np.asarray(self.velocity, dtype=float).copy()

    def copy(self) -> "PlatformState":
        return PlatformState(self.position.copy(), self.velocity.copy())


@dataclass(frozen=True)
class CableGeometry:
    """Per-cable geometry at a platform position."""

    distances: Array  # (4,) anchor-to-attachment [m]
    unit_directions: Array  # (4, 2) attachment -> anchor
    effective_lengths: Array  # (4,) routing_ratio * distance [m]


def cable_geometry(geom: RobotGeometry, position: Array) -> CableGeometry:
    """Distances, unit directions, and effective lengths at ``position``.

    Raises SingularConfigurationError when the platform attachment
    coincides with an anchor (distance < 1e-9 m).
    """
    x = np.asarray(position, dtype=float)
    delta = geom.anchors - (x[None, :] + geom.attachments)  # attachment -> anchor
    dist = np.linalg.norm(delta, axis=1)
    if np.any(dist < 1e-9):
        bad = int(np.argmin(dist))
        raise SingularConfigurationError(f"cable {bad} has zero length at {x}")
    units = delta / dist[:, None]
    return CableGeometry(dist, units, geom.routing_ratio * dist)


def winch_length(theta: float, model: WinchModel, cable: int) -> tuple[float, float]:
    """Quadratic length and its angle derivative for one cable."""
    return float(model.length(theta, cable)), float(model.slope(theta, cable))


def diameter_sensitivity(theta: float):
    """Sensitivity of paid-out length to winch diameter.

    Payout is (d/2)*theta, so d(payout)/d(diameter) = theta/2 regardless
    of the diameter itself: a given diameter error produces the same
    absolute length error on any drum, which is why halving the drum (or
    adding a 2:1 platform pulley, which doubles the required theta) halves
    accuracy while direct scaling of the drum does not.
    """
    if np.any(np.asarray(theta) < 0):
        raise ValueError("theta must be >= 0")
    return np.asarray(theta, dtype=float) / 2.0


def angles_for_position(
    geom: RobotGeometry, model: WinchModel, position: Array
) -> Array:
    """Exact inverse mapping: shaft angles that realize ``position``.

    Uses the model's own convention: payout models are matched against
    effective lengths, distance models against plain distances.
    """
    cg = cable_geometry(geom, position)
    target = cg.effective_lengths if model.convention == "payout" else cg.distances
    return np.array([model.angle_for_length(target[i], i) for i in range(4)])


def forward_kinematics(
    geom: RobotGeometry,
    model: WinchModel,
    theta: Array,
    initial_guess: Array | None = None,
    max_iters: int = 50,
    tol: float = 1e-12,
    residual_threshold: float = 0.05,
) -> tuple[Array, float]:
    """Least-squares platform position from four shaft angles.

    Minimizes sum_i (l(theta_i) - s_i * ||A_i - (x + B_i)||)^2 with
    s_i = routing_ratio for payout models and 1 for distance models.
    Returns (position, final residual RMS).  Raises EstimationError if
    Gauss-Newton fails to converge or the residual stays above
    ``residual_threshold`` (inconsistent cable set).
    """
    theta = np.asarray(theta, dtype=float)
    pred = np.array([model.length(theta[i], i) for i in range(4)])
    scale = geom.routing_ratio if model.convention == "payout" else np.ones(4)
    if initial_guess is None:
        x = np.array([geom.frame_width / 2.0, geom.frame_height / 2.0])
    else:
        x = np.asarray(initial_guess, dtype=float).copy()

    lam = 1e-12
    prev_cost = np.inf
    for _ in range(max_iters):
        delta = geom.anchors - (x[None, :] + geom.attachments)
        dist = np.linalg.norm(delta, axis=1)
        if np.any(dist < 1e-9):
            dist = np.maximum(dist, 1e-9)
        units = delta / dist[:, None]
        r = pred - scale * dist  # residuals (4,)
        # d(dist)/dx = -unit, so J = d r / d x = scale * unit
        J = scale[:, None] * units
        cost = float(r @ r)
        g = J.T @ r
        H = J.T @ J + lam * np.eye(2)
        step = np.linalg.solve(H, -g)
        if not np.all(np.isfinite(step)):
            raise EstimationError("forward kinematics produced non-finite step", residual=cost)
        x = x + step
        if abs(prev_cost - cost) < tol and np.linalg.norm(step) < 1e-12:
            break
        prev_cost = cost
    else:
        if np.linalg.norm(step) > 1e-9:
            raise EstimationError(
                f"forward kinematics did not converge in {max_iters} iterations",
                residual=float(np.sqrt(cost / 4.0)),
            )

    delta = geom.anchors - (x[None, :] + geom.attachments)
    dist = np.linalg.norm(delta, axis=1)
    r = pred - scale * dist
    rms = float(np.sqrt(np.mean(r * r)))
    if rms > residual_threshold:
        raise EstimationError(
            f"inconsistent cable set: residual RMS {rms:.4f} m", residual=rms
        )
    return x, rms


def simulate_payout_repeatability(
    diameters: Array,
    rotations: float,
    repeats: int,
    wrap_radius_jitter_std: float,
    rng: np.random.Generator,
) -> Array:
    """Monte-Carlo payout lengths under per-wrap effective-radius jitter.

    Each repeat draws an independent radius error for every wrap; payout
    over ``rotations`` turns integrates 2*pi*(d/2 + eps_w) per wrap.  The
    jitter std is identical across diameters, which is the experimental
    condition behind the flat millimeter-repeatability observation.

    Returns array (len(diameters), repeats) of payout lengths [m].
    """
    diameters = np.asarray(diameters, dtype=float)
    n_wraps = int(np.ceil(rotations))
    out = np.empty((diameters.size, repeats))
    for i, d in enumerate(diameters):
        eps = rng.normal(0.0, wrap_radius_jitter_std, size=(repeats, n_wraps))
        # fractional last wrap
        frac = np.ones(n_wraps)
        frac[-1] = rotations - (n_wraps - 1)
        per_wrap = 2.0 * np.pi * (d / 2.0 + eps) * frac[None, :]
        out[i] = per_wrap.sum(axis=1)
    return out


# -- configuration file I/O -------------------------------------------------

def load_geometry(path: str | Path) -> RobotGeometry:
    """Read a muralbot/geometry@1 YAML file (units encoded in field names)."""
    doc = configio.read_tagged(path, "geometry")
    return RobotGeometry(
        anchors=np.array(doc["anchors_m"], dtype=float),
        attachments=np.array(doc["attachments_m"], dtype=float),
        routing_ratio=np.array(doc["routing_ratio"], dtype=float),
        winch_nominal_diameter=np.array(doc["winch_nominal_diameter_m"], dtype=float),
        frame_width=float(doc["frame_width_m"]),
        frame_height=float(doc["frame_height_m"]),
        workspace_margin=float(doc.get("workspace_margin_m", 0.05)),
    )


def save_geometry(path: str | Path, geom: RobotGeometry) -> None:
    configio.write_tagged(
        path,
        "geometry",
        {
            "anchors_m": geom.anchors.tolist(),
            "attachments_m": geom.attachments.tolist(),
            "routing_ratio": [int(r) for r in geom.routing_ratio],
            "winch_nominal_diameter_m": geom.winch_nominal_diameter.tolist(),
            "frame_width_m": geom.frame_width,
            "frame_height_m": geom.frame_height,
            "workspace_margin_m": geom.workspace_margin,
        },
    )


def default_geometry(
    width: float = 5.8,
    height: float = 3.7,
    attachment_halfwidth: float = 0.30,
    attachment_halfheight: float = 0.20,
    top_routing: int = 2,
    winch_diameter: float = 0.0115,
    workspace_margin: float = 0.05,
) -> RobotGeometry:
    """Frame-filling anchor rectangle with a centered attachment rectangle.

    Platform attachment offsets are a build decision, not a site
    measurement; the defaults here are configuration only.
    """
    a, b = attachment_halfwidth, attachment_halfheight
    return RobotGeometry(
        anchors=np.array([[0.0, 0.0], [width, 0.0], [0.0, height], [width, height]]),
        attachments=np.array([[-a, -b], [a, -b], [-a, b], [a, b]]),
        routing_ratio=np.array([1, 1, top_routing, top_routing], dtype=float),
        winch_nominal_diameter=np.full(4, winch_diameter),
        frame_width=width,
        frame_height=height,
        workspace_margin=workspace_margin,
    )
