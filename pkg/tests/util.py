"""Shared test oracles and generators."""

import numpy as np

from muralbot.artwork import ArtworkDocument, Shape


def reference_kalman_filter(A, B, H, Q, R, K_fb, z_seq, z_nom, dx0, P0):
    """Step-by-step textbook filter: explicit predict with the applied
    control, then the measurement update.  Oracle for the affine form."""
    n = z_seq.shape[0]
    nx = A.shape[1]
    dx = dx0.copy()
    P = P0.copy()
    I = np.eye(nx)
    out = np.zeros((n, nx))
    for k in range(n):
        if k == 0:
            dx_pred, P_pred = dx, P0
        else:
            du = K_fb[k - 1] @ dx
            dx_pred = A[k - 1] @ dx + B[k - 1] @ du
            P_pred = A[k - 1] @ P @ A[k - 1].T + Q
        S = H[k] @ P_pred @ H[k].T + R
        L = P_pred @ H[k].T @ np.linalg.inv(S)
        dx = dx_pred + L @ ((z_seq[k] - z_nom[k]) - H[k] @ dx_pred)
        ImLH = I - L @ H[k]
        P = ImLH @ P_pred @ ImLH.T + L @ R @ L.T
        out[k] = dx
    return out


def random_linear_model(rng, n, nx=4, nz=8, nu=4):
    """Random bounded-spectral-radius time-varying model with SPD noise."""
    A = np.zeros((n, nx, nx))
    B = np.zeros((n, nx, nu))
    H = np.zeros((n, nz, nx))
    for k in range(n):
        M = rng.normal(0, 1, (nx, nx))
        M = M / max(np.abs(np.linalg.eigvals(M))) * rng.uniform(0.85, 1.02)
        A[k] = M
        B[k] = rng.normal(0, 0.1, (nx, nu))
        H[k] = rng.normal(0, 1, (nz, nx))
    q = rng.normal(0, 1, (nx, nx))
    Q = q @ q.T + 1e-3 * np.eye(nx)
    r = rng.normal(0, 1, (nz, nz))
    R = r @ r.T + 1e-3 * np.eye(nz)
    return A, B, H, Q, R


def random_document(rng, canvas=(2.0, 1.5), max_shapes=3) -> ArtworkDocument:
    """Random mix of rectangles, convex polygons, and polylines."""
    W, Hc = canvas
    palette = ("black", "red", "blue")
    shapes = []
    for _ in range(rng.integers(1, max_shapes + 1)):
        color = palette[rng.integers(0, len(palette))]
        kind = rng.choice(["rect", "convex", "polyline"])
        cx, cy = rng.uniform(0.3, W - 0.3), rng.uniform(0.3, Hc - 0.3)
        if kind == "rect":
            w = rng.uniform(0.1, min(0.6, W - cx - 0.05, cx - 0.05))
            h = rng.uniform(0.1, min(0.5, Hc - cy - 0.05, cy - 0.05))
            pts = [[cx - w, cy - h], [cx + w, cy - h], [cx + w, cy + h], [cx - w, cy + h]]
            shapes.append(Shape(color, "polygon", pts))
        elif kind == "convex":
            m = rng.integers(3, 7)
            r = rng.uniform(0.08, min(0.4, W - cx - 0.05, cx - 0.05, Hc - cy - 0.05, cy - 0.05))
            ang = np.sort(rng.uniform(0, 2 * np.pi, m))
            pts = np.stack([cx + r * np.cos(ang), cy + r * np.sin(ang)], axis=1)
            if abs(np.ptp(ang)) < 0.5 or len(np.unique(np.round(ang, 3))) < 3:
                continue
            shapes.append(Shape(color, "polygon", pts))
        else:
            m = rng.integers(2, 5)
            pts = np.clip(
                np.cumsum(rng.uniform(-0.3, 0.3, (m, 2)), axis=0) + [cx, cy],
                0.05, [W - 0.05, Hc - 0.05],
            )
            if np.all(np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-3):
                shapes.append(Shape(color, "polyline", pts))
    if not shapes:
        shapes.append(Shape("black", "polyline", [[0.3, 0.3], [0.9, 0.9]]))
    return ArtworkDocument(W, Hc, palette, tuple(shapes))
