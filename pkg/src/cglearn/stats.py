"""Empirical PDFs, autocorrelation functions and layer aggregation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dynamics.model import StateLayout, TrajectorySet
from .errors import PreconditionError, StructuralError

DEFAULT_BINS = 100
DEFAULT_MAX_LAG = 10.0


@dataclass(frozen=True, eq=False)
class EmpiricalPdf:
    bin_edges: np.ndarray
    density: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)


def _finite_series(series) -> np.ndarray:
    x = np.asarray(series, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise PreconditionError("series contains non-finite values")
    return x


def pdf(series, bins: int = DEFAULT_BINS, range: tuple[float, float] | None = None) -> EmpiricalPdf:
    """Normalized equal-width histogram over ``[min, max]`` (or ``range``).

    A constant series yields one bin of width ``max(1e-12, 1e-12 |x|)`` centred
    on the value.
    """
    x = _finite_series(series)
    if bins < 1:
        raise PreconditionError("bins must be positive")
    if x.size < bins:
        raise PreconditionError(f"series of length {x.size} is shorter than {bins} bins")
    lo, hi = (float(x.min()), float(x.max())) if range is None else map(float, range)
    if hi <= lo:
        w = max(1e-12, 1e-12 * abs(lo))
        edges = np.array([lo - w / 2, lo + w / 2])
        return EmpiricalPdf(edges, np.array([1.0 / (edges[1] - edges[0])]))
    counts, edges = np.histogram(x, bins=bins, range=(lo, hi))
    density = counts / (counts.sum() * np.diff(edges))
    return EmpiricalPdf(edges, density)


def pdf_distance(a, b, bins: int = DEFAULT_BINS) -> float:
    """L1 distance between normalized histograms on a shared grid."""
    x, y = _finite_series(a), _finite_series(b)
    lo, hi = min(x.min(), y.min()), max(x.max(), y.max())
    if hi <= lo:
        return 0.0
    pa, pb = pdf(x, bins, (lo, hi)), pdf(y, bins, (lo, hi))
    return float(np.sum(np.abs(pa.density - pb.density) * pa.widths))


def acf(series, max_lag: int) -> np.ndarray:
    """Normalized autocovariance at lags ``0..max_lag`` (in samples), via FFT."""
    x = _finite_series(series)
    max_lag = int(max_lag)
    if x.size <= max_lag:
        raise PreconditionError("series must be longer than max_lag")
    x = x - x.mean()
    var = float(x @ x)
    if var <= 0:
        raise PreconditionError("autocorrelation of a zero-variance series is undefined")
    n = x.size
    nfft = 1 << int(np.ceil(np.log2(2 * n - 1)))
    f = np.fft.rfft(x, nfft)
    r = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1]
    out = r / r[0]
    return np.clip(out, -1.0, 1.0)


def acf_distance(a, b, max_lag: int) -> float:
    """Relative L2 distance ``||acf_a - acf_b|| / ||acf_b||``."""
    ra, rb = acf(a, max_lag), acf(b, max_lag)
    return float(np.linalg.norm(ra - rb) / np.linalg.norm(rb))


def lag_steps(max_lag_time: float, dt: float) -> int:
    return int(round(max_lag_time / dt))


def aggregate_layer(traj: TrajectorySet, mapping: Mapping[str, Sequence[str]],
                    layout: StateLayout | None = None) -> TrajectorySet:
    """Column sums per site, e.g. ``w_i = sum_j v_{i,j}``.

    The result lives on ``layout`` when given (it must contain the mapping
    keys), otherwise on a dense layout of the keys.
    """
    names = list(mapping)
    cols = []
    have = set(traj.names)
    for key in names:
        members = list(mapping[key])
        missing = [m for m in members if m not in have]
        if missing or not members:
            raise StructuralError(f"aggregate {key!r}: missing columns {missing or members}")
        cols.append(sum(traj.column(m) for m in members))
    values = np.column_stack(cols)
    if layout is None:
        layout = StateLayout.dense(names, [False] * len(names))
        return TrajectorySet(layout, traj.dt, values, roles=("simulated",) * len(names))
    return TrajectorySet(layout, traj.dt, values, tuple(layout.index(k) for k in names), ("simulated",) * len(names))


def write_curve(path, x, y, header: tuple[str, str] = ("x", "value")) -> Path:
    """Two-column plot-data CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for a, b in zip(np.asarray(x).reshape(-1), np.asarray(y).reshape(-1)):
            w.writerow([repr(float(a)), repr(float(b))])
    return path


def write_series_stats(directory, traj: TrajectorySet, names: Sequence[str] | None = None,
                       bins: int = DEFAULT_BINS, max_lag_time: float = DEFAULT_MAX_LAG,
                       prefix: str = "") -> list[Path]:
    """``<name>_pdf.csv`` and ``<name>_acf.csv`` for each requested column."""
    directory = Path(directory)
    out = []
    lags = min(lag_steps(max_lag_time, traj.dt), traj.n_samples - 1)
    for nm in names or traj.names:
        x = traj.column(nm)
        p = pdf(x, bins)
        out.append(write_curve(directory / f"{prefix}{nm}_pdf.csv", p.centers, p.density, ("x", "density")))
        if np.ptp(x) > 0:
            r = acf(x, lags)
            out.append(write_curve(directory / f"{prefix}{nm}_acf.csv", np.arange(lags + 1) * traj.dt, r,
                                   ("lag", "acf")))
    return out
