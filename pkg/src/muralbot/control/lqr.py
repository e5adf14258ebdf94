"""Time-varying LQR backward pass (generic over dimensions)."""

from __future__ import annotations

import numpy as np

from ..errors import SynthesisError

Array = np.ndarray


def lqr_backward_pass(
    A: Array,
    B: Array,
    Q: Array,
    R: Array,
    Qf: Array | None = None,
) -> Array:
    """Discrete Riccati recursion; returns gains K with du = K @ dx.

    A: (n, nx, nx), B: (n, nx, nu); Q (nx, nx) and R (nu, nu) are the
    stage cost Hessians (positive semi-definite / definite), Qf the
    terminal cost (defaults to Q).  Raises SynthesisError naming the
    timestep if the control Hessian loses positive definiteness.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n, nx, nu = B.shape
    Qf = Q if Qf is None else Qf
    P = Qf.copy()
    K = np.zeros((n, nu, nx))
    for k in range(n - 1, -1, -1):
        Ak, Bk = A[k], B[k]
        S = R + Bk.T @ P @ Bk
        try:
            cS = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise SynthesisError(f"Riccati control Hessian not PD at timestep {k}")
        BtPA = Bk.T @ P @ Ak
        Kk = -np.linalg.solve(S, BtPA)
        K[k] = Kk
        P = Q + Ak.T @ P @ Ak + BtPA.T @ Kk
        P = 0.5 * (P + P.T)
        if not np.all(np.isfinite(P)):
            raise SynthesisError(f"Riccati recursion diverged at timestep {k}")
    return K
