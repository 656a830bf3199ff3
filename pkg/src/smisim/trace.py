"""Uniformly sampled time series and their CSV form."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class FrequencyTrace:
    """Uniformly sampled trace: detuning in Hz, or a demodulated quadrature in V.

    ``meta`` carries provenance (seed, config digest, generator name).
    """

    t0: float
    dt: float
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.values.ndim != 1:
            raise ValueError("values must be one-dimensional")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")

    def __len__(self):
        return self.values.size

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.size)

    @property
    def duration(self) -> float:
        return self.values.size * self.dt

    @property
    def sample_rate(self) -> float:
        return 1.0 / self.dt

    def __add__(self, other: FrequencyTrace) -> FrequencyTrace:
        if other.values.shape != self.values.shape or other.dt != self.dt:
            raise ValueError("traces must share length and sampling")
        return FrequencyTrace(self.t0, self.dt, self.values + other.values, dict(self.meta))


def write_columns(path, header: list[str], columns) -> None:
    """Write equal-length columns as CSV with a one-line header.

    Floats use ``repr`` so the file is exact and byte-reproducible.
    """
    cols = [np.asarray(c) for c in columns]
    n = cols[0].size
    if any(c.size != n for c in cols):
        raise ValueError("columns must have equal length")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*(c.tolist() for c in cols)):
            w.writerow([repr(v) for v in row])


def read_columns(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in r] for r in reader if r]
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def trace_from_csv(path: str | Path, column: str | None = None) -> FrequencyTrace:
    """Load a trace written with a leading time column (``t_s``)."""
    cols = read_columns(path)
    names = list(cols)
    t = cols[names[0]]
    name = column or names[1]
    if t.size < 2:
        raise ValueError(f"{path}: need at least two samples")
    dt = float(np.median(np.diff(t)))
    if not np.allclose(np.diff(t), dt, rtol=1e-6, atol=0):
        raise ValueError(f"{path}: time column is not uniformly sampled")
    return FrequencyTrace(float(t[0]), dt, cols[name], {"source": str(path), "column": name})
