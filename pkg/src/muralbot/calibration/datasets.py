"""Calibration datasets: recorded winch angles, optional position labels."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import PreconditionError

Array = np.ndarray

MIN_SAMPLES = 50


@dataclass(frozen=True)
class CalibrationDataset:
    """Recorded winch angles over time, with optional operator labels.

    labels is (n, 2) with NaN rows for unlabeled samples (the joint
    solve uses the labeled subset as exteroceptive anchors).
    """

    theta: Array  # (n, 4) rad
    timestamps: Array  # (n,) s, monotone
    labels: Array | None = None
    provenance: str = "manual-stage-1"

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        object.__setattr__(self, "timestamps", np.asarray(self.timestamps, dtype=float))
        if self.theta.ndim != 2 or self.theta.shape[1] != 4:
            raise PreconditionError("theta must be (n, 4)")
        if self.theta.shape[0] < MIN_SAMPLES:
            raise PreconditionError(
                f"need >= {MIN_SAMPLES} samples for a solvable problem, got {self.theta.shape[0]}"
            )
        if np.any(np.diff(self.timestamps) < 0):
            raise PreconditionError("timestamps must be monotone")
        if self.labels is not None:
            object.__setattr__(self, "labels", np.asarray(self.labels, dtype=float))
            if self.labels.shape != (self.theta.shape[0], 2):
                raise PreconditionError("labels must be (n, 2) with NaN for unlabeled")

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    def labeled_mask(self) -> Array:
        if self.labels is None:
            return np.zeros(self.n, dtype=bool)
        return ~np.isnan(self.labels[:, 0])

    def with_labels(self, indices, positions) -> "CalibrationDataset":
        labels = np.full((self.n, 2), np.nan) if self.labels is None else self.labels.copy()
        labels[np.asarray(indices)] = np.asarray(positions, dtype=float)
        return CalibrationDataset(self.theta, self.timestamps, labels, self.provenance)


def save_dataset_csv(path: str | Path, data: CalibrationDataset) -> None:
    """Columns: t, th1..th4 [, x_label, y_label] (blank when unlabeled)."""
    has_labels = data.labels is not None
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        header = ["t", "th1", "th2", "th3", "th4"]
        if has_labels:
            header += ["x_label", "y_label"]
        w.writerow(header)
        for k in range(data.n):
            row = [f"{data.timestamps[k]:.6f}"] + [f"{v:.9f}" for v in data.theta[k]]
            if has_labels:
                if np.isnan(data.labels[k, 0]):
                    row += ["", ""]
                else:
                    row += [f"{data.labels[k, 0]:.9f}", f"{data.labels[k, 1]:.9f}"]
            w.writerow(row)


def load_dataset_csv(path: str | Path, provenance: str = "manual-stage-1") -> CalibrationDataset:
    times, theta, labels = [], [], []
    with open(path) as f:
        reader = csv.DictReader(f)
        has_labels = reader.fieldnames and "x_label" in reader.fieldnames
        for row in reader:
            times.append(float(row["t"]))
            theta.append([float(row[f"th{i}"]) for i in range(1, 5)])
            if has_labels:
                if row["x_label"]:
                    labels.append([float(row["x_label"]), float(row["y_label"])])
                else:
                    labels.append([np.nan, np.nan])
    return CalibrationDataset(
        np.array(theta),
        np.array(times),
        np.array(labels) if labels else None,
        provenance,
    )
