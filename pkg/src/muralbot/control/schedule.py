"""Precomputed gain schedule container, the 1 kHz executor step, and the
versioned binary serialization used to hand schedules to the runtime.

Binary layout (all little-endian, documented for external readers):

    magic    4 bytes  b"MBGS"
    version  uint32   currently 1
    n        uint64   horizon length
    dt       float64
    nx,nu,nz uint32   state/control/measurement dims (4, 4, 8)
    u_min    float64
    u_max    float64
    then row-major float64 arrays, in order:
    x_nom (n,nx), u_nom (n,nu), z_nom (n,nz),
    K (n,nu,nx), xK (n,nx,nx), zK (n,nx,nz), k (n,nx)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ScheduleExhaustedError, SchemaError
from .linearize import NU, NX, NZ
from .manual import TensionLimits

Array = np.ndarray

_MAGIC = b"MBGS"
_VERSION = 1


@dataclass(frozen=True)
class GainSchedule:
    """Immutable per-timestep nominals and gains for Eqs-style execution."""

    x_nom: Array  # (n, 4) position+velocity
    u_nom: Array  # (n, 4)
    z_nom: Array  # (n, 8)
    K: Array  # (n, 4, 4) feedback, du = K dx
    xK: Array  # (n, 4, 4) estimator state matrix
    zK: Array  # (n, 4, 8) estimator measurement matrix
    k: Array  # (n, 4) estimator offset
    dt: float
    limits: TensionLimits

    def __post_init__(self):
        n = self.n
        shapes = {
            "x_nom": (n, NX), "u_nom": (n, NU), "z_nom": (n, NZ),
            "K": (n, NU, NX), "xK": (n, NX, NX), "zK": (n, NX, NZ), "k": (n, NX),
        }
        for name, shape in shapes.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
        if np.any(self.u_nom < self.limits.u_min - 1e-9) or np.any(
            self.u_nom > self.limits.u_max + 1e-9
        ):
            raise ValueError("nominal controls violate tension limits")

    @property
    def n(self) -> int:
        return self.x_nom.shape[0]


def online_step(
    schedule: GainSchedule, k: int, dx_prev: Array, z: Array
) -> tuple[Array, Array, bool]:
    """One executor step: two matrix-vector products and a clamp.

    Cost is independent of the horizon (plain indexed loads), which is
    what lets the loop run at 1 kHz regardless of trajectory length.
    Returns (dx, u, clamped).  Raises ScheduleExhaustedError for k
    outside [0, n).
    """
    if k < 0 or k >= schedule.n:
        raise ScheduleExhaustedError(f"timestep {k} outside schedule of length {schedule.n}")
    dx = schedule.xK[k] @ dx_prev + schedule.zK[k] @ z + schedule.k[k]
    u_raw = schedule.K[k] @ dx + schedule.u_nom[k]
    u = np.clip(u_raw, schedule.limits.u_min, schedule.limits.u_max)
    clamped = bool(np.any(u != u_raw))
    return dx, u, clamped


def save_schedule(path: str | Path, s: GainSchedule) -> None:
    header = _MAGIC + struct.pack(
        "<IQdIIIdd", _VERSION, s.n, s.dt, NX, NU, NZ, s.limits.u_min, s.limits.u_max
    )
    with open(path, "wb") as f:
        f.write(header)
        for arr in (s.x_nom, s.u_nom, s.z_nom, s.K, s.xK, s.zK, s.k):
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_schedule(path: str | Path) -> GainSchedule:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise SchemaError(f"{path}: not a gain schedule container")
    off = 4
    version, n, dt, nx, nu, nz, u_min, u_max = struct.unpack_from("<IQdIIIdd", data, off)
    off += struct.calcsize("<IQdIIIdd")
    if version != _VERSION:
        raise SchemaError(f"{path}: unsupported schedule version {version}")
    if (nx, nu, nz) != (NX, NU, NZ):
        raise SchemaError(f"{path}: dimension mismatch {(nx, nu, nz)}")

    def take(shape):
        nonlocal off
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += count * 8
        return arr

    return GainSchedule(
        x_nom=take((n, NX)),
        u_nom=take((n, NU)),
        z_nom=take((n, NZ)),
        K=take((n, NU, NX)),
        xK=take((n, NX, NX)),
        zK=take((n, NX, NZ)),
        k=take((n, NX)),
        dt=dt,
        limits=TensionLimits(u_min, u_max),
    )


def dump_schedule_text(path: str | Path, s: GainSchedule, stride: int = 100) -> None:
    """Human-readable debug dump (subsampled)."""
    lines = [
        f"# gain schedule: n={s.n} dt={s.dt} limits=[{s.limits.u_min}, {s.limits.u_max}]",
        "# k | x_nom | u_nom",
    ]
    for k in range(0, s.n, max(stride, 1)):
        x = " ".join(f"{v:+.4f}" for v in s.x_nom[k])
        u = " ".join(f"{v:+.2f}" for v in s.u_nom[k])
        lines.append(f"{k} | {x} | {u}")
    Path(path).write_text("\n".join(lines) + "\n")
