"""Offline Kalman gain precomputation collapsed into per-step affine updates.

Because the covariance recursion depends only on the linearized model
(never on measurements), the predict and update steps collapse offline
into one affine function of the previous estimate and the current
measurement:

    dx_k = xK_k @ dx_{k-1} + zK_k @ z_k + k_k

with  xK_k = (I - L_k H_k) @ Abar_{k-1},  zK_k = L_k,  k_k = -L_k @ z*_k,
where L_k are the innovation gains from the forward covariance recursion
and Abar is the state-estimate propagation matrix.  When the executor's
feedback law du = K @ dx is known at synthesis time, Abar folds it in
(Abar = A + B K) so the affine step reproduces a Kalman filter that
predicts with the known applied control; with no gains it is plain A.
The error covariance itself always propagates with plain A because the
applied control is known exactly and adds no uncertainty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConditioningError
from .linearize import NX, NZ, LinearizedModel

Array = np.ndarray


@dataclass(frozen=True)
class AffineEstimatorGains:
    xK: Array  # (n, 4, 4)
    zK: Array  # (n, 4, 8)
    k: Array  # (n, 4)

    @property
    def horizon(self) -> int:
        return self.xK.shape[0]


def estimator_precompute(
    model: LinearizedModel,
    z_nom: Array,
    control_gains: Array | None = None,
    P0: Array | None = None,
) -> AffineEstimatorGains:
    """Forward covariance recursion -> per-step affine estimator matrices.

    z_nom: (n, 8) nominal measurements.  control_gains: optional (n, 4, 4)
    feedback gains folded into the estimate propagation.  P0 is the prior
    covariance before the first measurement (defaults to Q).

    The step at k predicts from k-1 using A_{k-1}; at k = 0 the estimate
    carries over unpropagated (identity), i.e. dx_0 = (I - L_0 H_0) dx_init
    + L_0 (z_0 - z*_0).  Raises ConditioningError if the innovation or
    state covariance loses positive definiteness.
    """
    n = model.horizon
    if z_nom.shape != (n, NZ):
        raise ValueError("z_nom shape mismatch")
    A, H, Q, R = model.A, model.H, model.Q, model.R
    P = (Q if P0 is None else P0).copy()
    I = np.eye(NX)

    xK = np.zeros((n, NX, NX))
    zK = np.zeros((n, NX, NZ))
    k_off = np.zeros((n, NX))

    for k in range(n):
        if k == 0:
            P_pred = P
            Abar = I
        else:
            Ak = A[k - 1]
            P_pred = Ak @ P @ Ak.T + Q
            Abar = Ak if control_gains is None else Ak + model.B[k - 1] @ control_gains[k - 1]
        Hk = H[k]
        S = Hk @ P_pred @ Hk.T + R
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise ConditioningError(f"innovation covariance not PD at timestep {k}")
        L = np.linalg.solve(S.T, (P_pred @ Hk.T).T).T  # P H^T S^-1
        ImLH = I - L @ Hk
        # Joseph form keeps P symmetric PD under roundoff
        P = ImLH @ P_pred @ ImLH.T + L @ R @ L.T
        P = 0.5 * (P + P.T)
        if np.any(np.linalg.eigvalsh(P) <= 0):
            raise ConditioningError(f"state covariance lost positive definiteness at {k}")
        xK[k] = ImLH @ Abar
        zK[k] = L
        k_off[k] = -L @ z_nom[k]
    return AffineEstimatorGains(xK=xK, zK=zK, k=k_off)
