"""Causation entropy under the Gaussian approximation and term selection.

For a candidate term ``f_m`` of equation ``n`` the causation entropy is the
information ``f_m(t)`` carries about ``z_n(t + dt)`` beyond all other candidates
of that row. With every distribution approximated as Gaussian it reduces to log
determinants of empirical covariances,

    C = 1/2 [ln det R_XY - ln det R_Y - ln det R_XYZ + ln det R_YZ],

with ``X`` the target, ``Z = f_m`` and ``Y`` the remaining candidates. The
quantity is scale invariant, so covariances are standardized to correlations
before a small diagonal jitter is added.

Only the Gaussian approximation is implemented; it detects dependence through
second-order moments.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dynamics.model import TermLibrary, TrajectorySet, term_matrix
from .errors import PreconditionError, StructuralError

LOG_2PI = math.log(2.0 * math.pi)
MAX_SAMPLES = 200_000
JITTER = 1e-10


def _logdet(cov: np.ndarray) -> float:
    if cov.shape[0] == 0:
        return 0.0
    L = np.linalg.cholesky(cov)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def gaussian_entropy(cov) -> float:
    """Differential entropy (nats) of a Gaussian with covariance ``cov``."""
    C = np.atleast_2d(np.asarray(cov, dtype=float))
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise StructuralError("covariance must be a square matrix")
    scale = max(1.0, float(np.max(np.abs(C)))) if C.size else 1.0
    if not np.allclose(C, C.T, rtol=0, atol=1e-12 * scale):
        raise StructuralError("covariance must be symmetric")
    s = C.shape[0]
    eps = JITTER * (1.0 + float(np.mean(np.diag(C)))) if s else 0.0
    return 0.5 * s * (1.0 + LOG_2PI) + 0.5 * _logdet(C + eps * np.eye(s))


def _correlation(A: np.ndarray) -> tuple[np.ndarray, float]:
    """Jittered correlation matrix of the columns of ``A`` and its condition number."""
    Ac = A - A.mean(axis=0)
    C = Ac.T @ Ac / max(A.shape[0] - 1, 1)
    sd = np.sqrt(np.diag(C))
    sd[sd == 0] = 1.0
    R = C / np.outer(sd, sd)
    R = 0.5 * (R + R.T)
    R[np.diag_indices_from(R)] += JITTER * (1.0 + float(np.mean(np.diag(R))))
    w = np.linalg.eigvalsh(R)
    cond = float(w[-1] / w[0]) if w[0] > 0 else math.inf
    return R, cond


def _check_samples(n_samples: int, n_features: int):
    if n_samples < 10 * max(n_features, 1):
        raise PreconditionError(
            f"{n_samples} samples for {n_features} features; at least {10 * max(n_features, 1)} needed")


def causation_entropy(target, features, m: int) -> float:
    """Causation entropy of column ``m`` of ``features`` on ``target``.

    ``features`` holds only non-constant candidates (mean centering absorbs the
    constant). Evaluated with the explicit four-determinant formula.
    """
    x = np.asarray(target, dtype=float).reshape(-1)
    F = np.asarray(features, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    if F.shape[0] != x.shape[0]:
        raise StructuralError("target and features must have the same number of samples")
    if not 0 <= m < F.shape[1]:
        raise StructuralError(f"feature index {m} out of range")
    _check_samples(x.shape[0], F.shape[1])
    R, _ = _correlation(np.column_stack([x, F]))
    M = F.shape[1]
    y = [1 + k for k in range(M) if k != m]
    z = 1 + m
    sub = lambda idx: R[np.ix_(idx, idx)]  # noqa: E731
    val = 0.5 * (_logdet(sub([0] + y)) - _logdet(sub(y)) - _logdet(sub([0] + y + [z])) + _logdet(sub(y + [z])))
    return max(val, 0.0)


def causation_entropies(target, features) -> tuple[np.ndarray, float]:
    """All causation entropies of ``features`` columns on ``target`` at once.

    Uses the partial-correlation identity ``C_m = -1/2 ln(1 - rho_m^2)`` with
    ``rho_m`` read off the precision matrix of ``[target, features]``; this
    equals the four-determinant formula. Returns values and condition number.
    """
    x = np.asarray(target, dtype=float).reshape(-1)
    F = np.asarray(features, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    _check_samples(x.shape[0], F.shape[1])
    if F.shape[1] == 0:
        return np.zeros(0), 1.0
    R, cond = _correlation(np.column_stack([x, F]))
    L = np.linalg.cholesky(R)
    P = np.linalg.solve(L.T, np.linalg.solve(L, np.eye(R.shape[0])))
    P = 0.5 * (P + P.T)
    rho2 = P[0, 1:] ** 2 / (P[0, 0] * np.diag(P)[1:])
    rho2 = np.clip(rho2, 0.0, 1.0 - 1e-16)
    vals = -0.5 * np.log1p(-rho2)
    return np.maximum(vals, 0.0), cond


@dataclass(frozen=True, eq=False)
class CausationMatrix:
    """Per-row causation entropies, the thresholds used and the resulting indicator.

    ``tested[n][m]`` is False for constant terms, which are always retained and
    carry a value of 0.
    """

    library: TermLibrary
    values: tuple[np.ndarray, ...]
    tested: tuple[np.ndarray, ...]
    threshold: tuple[float, ...]
    diagnostics: dict = field(default_factory=dict)

    @property
    def indicator(self) -> tuple[np.ndarray, ...]:
        return tuple((v > th) | ~t for v, t, th in zip(self.values, self.tested, self.threshold))

    def rethreshold(self, threshold) -> "CausationMatrix":
        return CausationMatrix(self.library, self.values, self.tested,
                               _row_thresholds(self.library, threshold), self.diagnostics)

    def long_table(self) -> list[dict]:
        """One record per (row, term) with value and retention flag."""
        lay = self.library.layout
        out = []
        for n, (row, v, ind) in enumerate(zip(self.library.rows, self.values, self.indicator)):
            for t, val, keep in zip(row, v, ind):
                out.append({"row": lay.names[n], "term": t.label, "value": float(val), "retained": bool(keep)})
        return out


def _row_thresholds(library: TermLibrary, threshold) -> tuple[float, ...]:
    """Scalar, one value per row, or ``{row name or group name: value}`` with key ``"default"``."""
    lay = library.layout
    if isinstance(threshold, dict):
        default = threshold.get("default")
        out = []
        for n, name in enumerate(lay.names):
            site = lay.site_of(n)
            val = threshold.get(name, threshold.get(site[0]) if site else None)
            val = default if val is None else val
            if val is None:
                raise StructuralError(f"no threshold for row {name!r}")
            out.append(float(val))
    elif np.ndim(threshold) == 0:
        out = [float(threshold)] * lay.n
    else:
        out = [float(v) for v in threshold]
        if len(out) != lay.n:
            raise StructuralError("per-row thresholds must have one entry per row")
    if any(not v > 0 for v in out):
        raise StructuralError("causation thresholds must be positive")
    return tuple(out)


def subsample_step(n: int, limit: int = MAX_SAMPLES) -> int:
    return max(1, math.ceil(n / limit))


def build_causation_matrix(data: TrajectorySet, library: TermLibrary, threshold=1e-3,
                           burn_in_fraction: float = 0.01, max_samples: int = MAX_SAMPLES,
                           rows: Sequence[int] | None = None) -> CausationMatrix:
    """Causation entropies of every non-constant term of every row on ``z_n(t + dt)``.

    ``data`` must contain every variable referenced by ``library``. The first
    ``burn_in_fraction`` of samples is discarded and every k-th remaining
    sample is used so that at most ``max_samples`` enter the covariances.
    Rows not listed in ``rows`` keep all their terms (values set to +inf).
    """
    lay = library.layout
    needed = sorted({v for row in library.rows for t in row for v, _ in t.factors} | set(range(lay.n)))
    Z = data.matrix(needed)
    T = Z.shape[0]
    start = int(math.floor(burn_in_fraction * T))
    idx = np.arange(start, T - 1)
    idx = idx[:: subsample_step(idx.size, max_samples)]
    Zt = Z[idx]
    Zn = Z[idx + 1]
    values, tested, conds = [], [], {}
    active = set(range(lay.n)) if rows is None else set(rows)
    for n, row in enumerate(library.rows):
        nonconst = [m for m, t in enumerate(row) if not t.is_constant]
        v = np.zeros(len(row))
        tmask = np.zeros(len(row), dtype=bool)
        if n in active:
            F = term_matrix(library, Zt, n, nonconst, {})
            vals, cond = causation_entropies(Zn[:, n], F)
            v[nonconst] = vals
            tmask[nonconst] = True
            if cond > 1e12:
                conds[lay.names[n]] = cond
        else:
            v[nonconst] = np.inf
        values.append(v)
        tested.append(tmask if n in active else np.zeros(len(row), dtype=bool))
    diag = {"samples": int(idx.size), "stride": int(subsample_step(np.arange(start, T - 1).size, max_samples))}
    if conds:
        diag["ill_conditioned_rows"] = conds
    return CausationMatrix(library, tuple(values), tuple(tested), _row_thresholds(library, threshold), diag)


def frobenius_distance(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> float:
    """Square root of the number of mismatched indicator entries."""
    if len(a) != len(b):
        raise StructuralError("indicator matrices have different row counts")
    count = 0
    for ra, rb in zip(a, b):
        ra, rb = np.asarray(ra, dtype=bool), np.asarray(rb, dtype=bool)
        if ra.shape != rb.shape:
            raise StructuralError("indicator rows have different lengths")
        count += int(np.count_nonzero(ra != rb))
    return math.sqrt(count)


def write_causation_csv(path, cm: CausationMatrix, what: str = "values") -> Path:
    """Wide CSV: one line per equation, one column per distinct term label."""
    if what not in ("values", "indicator"):
        raise StructuralError("what must be 'values' or 'indicator'")
    lib = cm.library
    cols: list[str] = []
    for n in range(lib.n_rows):
        for lab in lib.labels(n):
            if lab not in cols:
                cols.append(lab)
    data = cm.values if what == "values" else cm.indicator
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row"] + cols)
        for n in range(lib.n_rows):
            cell = dict(zip(lib.labels(n), data[n]))
            w.writerow([lib.layout.names[n]] + [
                "" if lab not in cell else (repr(float(cell[lab])) if what == "values" else int(bool(cell[lab])))
                for lab in cols])
    return path


def write_causation_long(path, cm: CausationMatrix) -> Path:
    """Long-form CSV (row, term, value, retained) backing coefficient-matrix diagrams."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["row", "term", "value", "retained"])
        w.writeheader()
        for rec in cm.long_table():
            w.writerow({**rec, "value": repr(rec["value"]), "retained": int(rec["retained"])})
    return path
