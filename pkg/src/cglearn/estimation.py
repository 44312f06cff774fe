"""Maximum-likelihood estimation of retained coefficients with optional equality constraints.

The Euler-Maruyama transition ``z^{j+1} = s^j + M^j Theta + r^j`` with
``r^j ~ N(0, Sigma)`` gives the negative log-likelihood

    L = 1/2 sum_j (z^{j+1} - s^j - M^j Theta)^T Sigma^{-1} (...) + J/2 log det Sigma.

``Sigma`` is diagonal. Its observed entries come from the quadratic variation
of the increments (``Theta = 0``); hidden entries are fixed by configuration.
``Theta`` then solves ``D Theta = c`` or, with constraints ``H Theta = g``, the
Lagrange system. ``M^j`` is block diagonal across rows, so everything is
accumulated as per-row sufficient statistics and the full design matrix is
never formed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg as sla

from .dynamics.model import CoefficientModel, TermLibrary, TrajectorySet, evaluate_monomial
from .errors import EstimationError, StructuralError

COND_LIMIT = 1e12
CHUNK = 1 << 16


def parameter_index(library: TermLibrary, indicator: Sequence[np.ndarray],
                    fixed: Mapping[tuple[int, int], float] | None = None) -> tuple[tuple[int, int], ...]:
    """Row-major ``(row, term)`` positions of free parameters: retained and not fixed."""
    fixed = fixed or {}
    if len(indicator) != library.n_rows:
        raise StructuralError("indicator must have one row per library row")
    out = []
    for n, (row, ind) in enumerate(zip(library.rows, indicator)):
        ind = np.asarray(ind, dtype=bool)
        if ind.shape != (len(row),):
            raise StructuralError(f"indicator row {n} has the wrong length")
        out += [(n, m) for m in range(len(row)) if ind[m] and (n, m) not in fixed]
    return tuple(out)


def _normalize_fixed(library: TermLibrary, fixed) -> dict[tuple[int, int], float]:
    """Accept ``{(row, term): value}`` or an iterable of ``(row, term, value)``; names or indices."""
    items = fixed.items() if isinstance(fixed, Mapping) else (((r, t), v) for r, t, v in (fixed or ()))
    out = {}
    lay = library.layout
    for (r, t), v in items:
        n = lay.index(r) if isinstance(r, str) else int(r)
        m = library.term_index(n, t) if isinstance(t, str) else int(t)
        if not (0 <= n < library.n_rows and 0 <= m < len(library.rows[n])):
            raise StructuralError(f"fixed term {(r, t)} out of range")
        out[(n, m)] = float(v)
    return out


class Regression:
    """Per-row regression ``z_n^{j+1} = s_n^j + M_n^j theta_n + r_n^j``.

    ``M_n^j`` holds ``dt * f_m(Z^j)`` for the free terms of row ``n`` and
    ``s_n^j = z_n^j + dt * sum(fixed coefficient * f_m(Z^j))``.
    """

    def __init__(self, data: TrajectorySet, library: TermLibrary, indicator, fixed=None,
                 hidden_noise=None, start: int = 0):
        lay = library.layout
        self.library = library
        self.dt = data.dt
        self.fixed = _normalize_fixed(library, fixed)
        self.params = parameter_index(library, indicator, self.fixed)
        needed = sorted({v for row in library.rows for t in row for v, _ in t.factors} | set(range(lay.n)))
        self.Z = data.matrix(needed)
        T = self.Z.shape[0]
        if not 0 <= start < T - 1:
            raise StructuralError("regression start index leaves no transitions")
        self.start = int(start)
        self.J = T - 1 - self.start
        self.columns = tuple(tuple(m for (r, m) in self.params if r == n) for n in range(lay.n))
        # None: every row (hidden ones included) gets its quadratic variation
        self.hidden_noise = None if hidden_noise is None else np.broadcast_to(
            np.asarray(hidden_noise, float), (lay.n,)).copy()
        self._stats = None

    @property
    def P(self) -> int:
        return len(self.params)

    def _row_block(self, n: int, lo: int, hi: int):
        """Design columns, offset and target of row ``n`` over transitions ``lo..hi-1``."""
        Zc = self.Z[lo:hi]
        cache: dict = {}
        row = self.library.rows[n]
        M = np.empty((hi - lo, len(self.columns[n])))
        for k, m in enumerate(self.columns[n]):
            M[:, k] = self.dt * evaluate_monomial(Zc, row[m].factors, cache)
        s = Zc[:, n].copy()
        for (r, m), v in self.fixed.items():
            if r == n and v != 0.0:
                s += self.dt * v * evaluate_monomial(Zc, row[m].factors, cache)
        return M, s, self.Z[lo + 1:hi + 1, n]

    def design(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Full ``(M_n, s_n, z_n^{j+1})`` for row ``n`` (memory heavy for long series)."""
        return self._row_block(n, self.start, self.start + self.J)

    def stats(self):
        """Per-row ``(D_n = M^T M, c_n = M^T y, y^T y)`` with ``y = z^{j+1} - s^j``."""
        if self._stats is None:
            out = []
            for n in range(self.library.n_rows):
                p = len(self.columns[n])
                D, c, yy = np.zeros((p, p)), np.zeros(p), 0.0
                for lo in range(self.start, self.start + self.J, CHUNK):
                    hi = min(lo + CHUNK, self.start + self.J)
                    M, s, zn = self._row_block(n, lo, hi)
                    y = zn - s
                    D += M.T @ M
                    c += M.T @ y
                    yy += float(y @ y)
                out.append((D, c, yy))
            self._stats = out
        return self._stats

    def quadratic_variation(self) -> np.ndarray:
        """``Sigma_nn = (1/J) sum_j y_n^2`` at ``Theta = 0``."""
        return np.array([yy / self.J for _, _, yy in self.stats()])


def assemble_regression(data: TrajectorySet, library: TermLibrary, indicator, fixed=None,
                        hidden_noise=None, start: int = 0) -> Regression:
    return Regression(data, library, indicator, fixed, hidden_noise, start)


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Linear equalities ``h @ Theta = g`` over the free-parameter vector."""

    h: np.ndarray
    g: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        h = np.atleast_2d(np.asarray(self.h, dtype=float))
        g = np.asarray(self.g, dtype=float).reshape(-1)
        if h.size == 0:
            h = h.reshape(0, h.shape[1] if h.ndim == 2 else 0)
        if h.shape[0] != g.shape[0]:
            raise StructuralError("h and g must have the same number of rows")
        if h.shape[0] and np.linalg.matrix_rank(h) < h.shape[0]:
            raise StructuralError("constraint matrix must have full row rank")
        labels = tuple(self.labels) if self.labels else tuple(f"c{k}" for k in range(h.shape[0]))
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "labels", labels)

    @property
    def K(self) -> int:
        return self.h.shape[0]

    @classmethod
    def empty(cls, P: int) -> "ConstraintSet":
        return cls(np.zeros((0, P)), np.zeros(0), ())


def build_energy_constraints(library: TermLibrary, indicator, fixed=None) -> ConstraintSet:
    """Sum-to-zero rows for the library's energy pairs that survive the indicator.

    A pair with both members retained gives ``xi_a + xi_b = 0``; a pair with one
    member retained gives ``xi = 0`` for that member. Fixed members move to the
    right-hand side.
    """
    fixed = _normalize_fixed(library, fixed)
    params = parameter_index(library, indicator, fixed)
    pos = {p: k for k, p in enumerate(params)}
    ind = [np.asarray(i, dtype=bool) for i in indicator]
    names = library.layout.names
    rows, g, labels, seen = [], [], [], set()
    for a, b in library.energy_pairs:
        kept = [e for e in (a, b) if ind[e[0]][e[1]]]
        if not kept:
            continue
        free = [e for e in kept if e in pos]
        if not free:
            continue
        key = tuple(sorted(free))
        if key in seen:
            continue
        seen.add(key)
        r = np.zeros(len(params))
        for e in free:
            r[pos[e]] = 1.0
        rows.append(r)
        g.append(-sum(fixed.get(e, 0.0) for e in kept))
        lab = " + ".join(f"{names[e[0]]}:{library.rows[e[0]][e[1]].label}" for e in kept)
        labels.append(lab + " = 0")
    if not rows:
        return ConstraintSet.empty(len(params))
    return ConstraintSet(np.array(rows), np.array(g), tuple(labels))


@dataclass(frozen=True, eq=False)
class EstimationResult:
    theta: np.ndarray
    sigma: np.ndarray
    lam: np.ndarray
    objective: float
    params: tuple[tuple[int, int], ...]
    fixed: dict
    diagnostics: dict = field(default_factory=dict)

    @property
    def noise(self) -> np.ndarray:
        """Noise amplitudes ``sqrt(Sigma_nn / dt)``."""
        return np.sqrt(self.sigma / self.diagnostics["dt"])

    def coefficients(self, library: TermLibrary) -> tuple[np.ndarray, ...]:
        xi = [np.zeros(len(r)) for r in library.rows]
        for (n, m), v in self.fixed.items():
            xi[n][m] = v
        for (n, m), v in zip(self.params, self.theta):
            xi[n][m] = v
        return tuple(xi)

    def to_model(self, library: TermLibrary) -> CoefficientModel:
        return CoefficientModel(library, self.coefficients(library), self.noise)

    def to_dict(self, library: TermLibrary) -> dict:
        lay = library.layout
        return {
            "parameters": [{"row": lay.names[n], "term": library.rows[n][m].label, "value": float(v)}
                           for (n, m), v in zip(self.params, self.theta)],
            "fixed": [{"row": lay.names[n], "term": library.rows[n][m].label, "value": float(v)}
                      for (n, m), v in self.fixed.items()],
            "noise": {lay.names[n]: float(s) for n, s in enumerate(self.noise)},
            "multipliers": [float(v) for v in self.lam],
            "objective": float(self.objective),
            "diagnostics": {k: (float(v) if isinstance(v, (float, np.floating)) else v)
                            for k, v in self.diagnostics.items()},
        }

    def write_json(self, path, library: TermLibrary) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(library), indent=1))
        return path


def _sigma(reg: Regression) -> np.ndarray:
    lay = reg.library.layout
    qv = reg.quadratic_variation()
    sig = qv.copy()
    estimated = range(lay.n)
    if reg.hidden_noise is not None:
        for n in lay.hidden_indices:
            sig[n] = reg.hidden_noise[n] ** 2 * reg.dt
        estimated = lay.observed_indices
    for n in estimated:
        if not sig[n] > 0:
            raise EstimationError(f"zero quadratic variation in row {lay.names[n]!r}")
    for n in range(lay.n):
        if not sig[n] > 0:
            raise EstimationError(f"configured noise of row {lay.names[n]!r} must be positive")
    return sig


def _row_solvers(reg: Regression):
    """Cholesky factors of each ``D_n`` with an equilibrated condition-number check."""
    out, conds = [], {}
    names = reg.library.layout.names
    for n, (D, _, _) in enumerate(reg.stats()):
        p = D.shape[0]
        if p == 0:
            out.append(None)
            continue
        d = np.sqrt(np.diag(D))
        if np.any(d == 0):
            raise EstimationError(f"row {names[n]!r}: a retained term vanishes on the data; raise the threshold")
        S = D / np.outer(d, d)
        w = np.linalg.eigvalsh(S)
        cond = float(w[-1] / w[0]) if w[0] > 0 else math.inf
        conds[names[n]] = cond
        if cond > COND_LIMIT:
            raise EstimationError(
                f"row {names[n]!r}: normal matrix is ill-conditioned (cond {cond:.3g}); raise the causation threshold")
        try:
            f = sla.cho_factor(S, lower=True)
        except np.linalg.LinAlgError:
            f = sla.cho_factor(S + 1e-12 * np.eye(p), lower=True)
        out.append((f, d))
    return out, conds


def _solve(f, b):
    fac, d = f
    return sla.cho_solve(fac, b / d[:, None] if b.ndim == 2 else b / d) / (d[:, None] if b.ndim == 2 else d)


def _objective(reg: Regression, theta_rows, sig) -> float:
    val = 0.0
    for n, ((D, c, yy), th) in enumerate(zip(reg.stats(), theta_rows)):
        rss = yy - 2.0 * float(th @ c) + float(th @ D @ th) if th.size else yy
        val += 0.5 * rss / sig[n] + 0.5 * reg.J * math.log(sig[n])
    return val


def _split(reg: Regression, theta):
    out, k = [], 0
    for cols in reg.columns:
        out.append(np.asarray(theta[k:k + len(cols)]))
        k += len(cols)
    return out


def _result(reg, theta, sig, lam, diag) -> EstimationResult:
    rows = _split(reg, theta)
    diag = {"dt": reg.dt, "J": reg.J, **diag}
    return EstimationResult(np.asarray(theta, float), sig, np.asarray(lam, float), _objective(reg, rows, sig),
                            reg.params, dict(reg.fixed), diag)


def mle_unconstrained(reg: Regression) -> EstimationResult:
    """``Sigma`` by quadratic variation, then ``Theta = D^{-1} c`` row by row."""
    sig = _sigma(reg)
    solvers, conds = _row_solvers(reg)
    theta = []
    for (D, c, _), f in zip(reg.stats(), solvers):
        if f is not None:
            theta.append(_solve(f, c))
    theta = np.concatenate(theta) if theta else np.zeros(0)
    return _result(reg, theta, sig, np.zeros(0), {"cond": max(conds.values(), default=1.0), "residual": 0.0})


def _exact_pairs(theta, H, g):
    """Split disjoint ``a + b = 0`` constraints symmetrically so the sum is exactly zero.

    The change is of the order of the solver residual.
    """
    theta = theta.copy()
    shared = np.count_nonzero(H, axis=0) > 1
    for row, gk in zip(H, g):
        nz = np.flatnonzero(row)
        if gk != 0 or nz.size != 2 or np.any(row[nz] != 1.0) or np.any(shared[nz]):
            continue
        a, b = nz
        half = 0.5 * (theta[a] - theta[b])
        theta[a], theta[b] = half, -half
    return theta


def mle_constrained(reg: Regression, constraints: ConstraintSet) -> EstimationResult:
    """Lagrange solution ``lambda = (H D^-1 H^T)^-1 (H D^-1 c - g)``, ``Theta = D^-1 (c - H^T lambda)``.

    ``D`` and ``c`` include the ``Sigma^{-1}`` weights, so rows coupled by a
    constraint are weighted by their noise levels.
    """
    if constraints.h.shape[1] != reg.P:
        raise StructuralError(f"constraints act on {constraints.h.shape[1]} parameters, regression has {reg.P}")
    if constraints.K == 0:
        return mle_unconstrained(reg)
    sig = _sigma(reg)
    solvers, conds = _row_solvers(reg)
    H, g = constraints.h, constraints.g
    # D^{-1} c and D^{-1} H^T, with D = blockdiag(D_n / Sigma_nn)
    Dc = np.zeros(reg.P)
    DH = np.zeros((reg.P, constraints.K))
    k = 0
    for n, ((D, c, _), f) in enumerate(zip(reg.stats(), solvers)):
        p = len(reg.columns[n])
        if p:
            Dc[k:k + p] = _solve(f, c)
            DH[k:k + p] = sig[n] * _solve(f, H[:, k:k + p].T)
        k += p
    S = H @ DH
    S = 0.5 * (S + S.T)
    w = np.linalg.eigvalsh(S)
    if not w[0] > w[-1] * 1e-14:
        raise EstimationError("constraint system H D^-1 H^T is singular (redundant constraints)")
    lam = np.linalg.solve(S, H @ Dc - g)
    theta = Dc - DH @ lam
    res = H @ theta - g
    if np.max(np.abs(res)) > 1e-10:
        # project back onto the constraint manifold in the D metric
        theta = theta - DH @ np.linalg.solve(S, res)
        res = H @ theta - g
    theta = _exact_pairs(theta, H, g)
    res = H @ theta - g
    diag = {"cond": max(conds.values(), default=1.0), "residual": float(np.max(np.abs(res)))}
    return _result(reg, theta, sig, lam, diag)


def estimate(data: TrajectorySet, library: TermLibrary, indicator, hidden_noise=None, fixed=None,
             constrained: bool = True, start: int = 0) -> EstimationResult:
    """Convenience wrapper: assemble, build energy constraints and solve."""
    reg = assemble_regression(data, library, indicator, fixed, hidden_noise, start)
    if constrained:
        return mle_constrained(reg, build_energy_constraints(library, indicator, fixed))
    return mle_unconstrained(reg)
