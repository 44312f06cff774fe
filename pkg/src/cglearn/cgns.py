"""Closed-form filtering, smoothing and backward sampling for conditional-Gaussian systems.

Given an observed path ``X`` the hidden state of

    dX = (A0 + A1 Y) dt + B1 dW1
    dY = (a0 + a1 Y) dt + b2 dW2

is Gaussian conditional on ``X``. The filter integrates the Kalman-Bucy type
mean/covariance equations forward in time, the smoother integrates the
corresponding backward equations, and the sampler draws hidden paths from the
smoothing distribution by a backward stochastic recursion. All three use
explicit Euler steps at the data step size; ``dX/dt`` is the one-step forward
difference.

Because ``B1`` and ``b2`` are diagonal, the hidden variables split into blocks
(connected components of the coupling graph) that are filtered independently.
Blocks of equal size are stacked and advanced together by a compiled kernel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .dynamics.model import CoefficientModel, TrajectorySet
from .errors import ConfigurationError, DivergenceError, StructuralError

FILTER, SMOOTHER = "filter", "smoother"


@dataclass(frozen=True)
class BlockPartition:
    """Disjoint hidden-variable blocks with the observed rows coupled to each.

    Indices are layout indices. ``blocks[k]`` is sorted; blocks are ordered by
    their smallest member.
    """

    blocks: tuple[tuple[int, ...], ...]
    coupling: tuple[tuple[int, ...], ...]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(b) for b in self.blocks)


def partition_blocks(model: CoefficientModel) -> BlockPartition:
    """Connected components of the hidden coupling graph of ``model``.

    Hidden ``k`` and ``l`` are linked when a nonzero term of row ``k`` carries
    the hidden factor ``l`` or when one observed row has nonzero terms with both
    hidden factors.
    """
    lib = model.library
    lay = lib.layout
    hid = lay.hidden_indices
    parent = {k: k for k in hid}

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    touches: dict[int, set] = {}
    for n, (row, c) in enumerate(zip(lib.rows, model.xi)):
        for t, v in zip(row, c):
            if v == 0.0:
                continue
            _, h = lib.split(t)
            if h is None:
                continue
            if lay.observed_mask[n]:
                touches.setdefault(n, set()).add(h)
            else:
                union(n, h)
    for hs in touches.values():
        hs = sorted(hs)
        for a in hs[1:]:
            union(hs[0], a)
    comp: dict[int, list] = {}
    for k in hid:
        comp.setdefault(find(k), []).append(k)
    blocks = sorted((tuple(sorted(v)) for v in comp.values()), key=lambda b: b[0])
    coupling = []
    for b in blocks:
        s = set(b)
        coupling.append(tuple(sorted(i for i, hs in touches.items() if hs & s)))
    return BlockPartition(tuple(blocks), tuple(coupling))


class GaussianPath:
    """Conditional mean and block covariances over the time grid.

    Covariances are held per group of equally sized blocks as arrays
    ``(T, n_blocks, b, b)``; :meth:`cov` assembles the dense matrix at one step.
    """

    def __init__(self, kind: str, partition: BlockPartition, hidden: Sequence[int], dt: float, groups):
        self.kind = kind
        self.partition = partition
        self.hidden = tuple(hidden)
        self.dt = float(dt)
        # groups: list of (block ids, mu (T, nb, b), R (T, nb, b, b))
        self._groups = groups
        for _, mu, R in groups:
            mu.setflags(write=False)
            R.setflags(write=False)
        self._mean = None

    @property
    def n_steps(self) -> int:
        return self._groups[0][1].shape[0] if self._groups else 0

    def _positions(self, ids):
        pos = {v: p for p, v in enumerate(self.hidden)}
        return np.array([[pos[v] for v in self.partition.blocks[i]] for i in ids], dtype=np.int64)

    @property
    def mean(self) -> np.ndarray:
        """``(T, N2)`` conditional mean in hidden-index order."""
        if self._mean is None:
            out = np.empty((self.n_steps, len(self.hidden)))
            for ids, mu, _ in self._groups:
                P = self._positions(ids)
                out[:, P.reshape(-1)] = mu.reshape(mu.shape[0], -1)
            out.setflags(write=False)
            self._mean = out
        return self._mean

    def variance(self) -> np.ndarray:
        """``(T, N2)`` marginal variances."""
        out = np.empty((self.n_steps, len(self.hidden)))
        for ids, _, R in self._groups:
            P = self._positions(ids)
            out[:, P.reshape(-1)] = np.diagonal(R, axis1=2, axis2=3).reshape(R.shape[0], -1)
        return out

    def cov(self, step: int) -> np.ndarray:
        """Dense ``N2 x N2`` covariance at one step (zero between blocks)."""
        out = np.zeros((len(self.hidden), len(self.hidden)))
        for ids, _, R in self._groups:
            P = self._positions(ids)
            for k in range(P.shape[0]):
                out[np.ix_(P[k], P[k])] = R[step, k]
        return out

    def block_arrays(self):
        """Internal per-group ``(block ids, mu, R)`` arrays (read-only)."""
        return list(self._groups)


# ---------------------------------------------------------------------------
# compiled kernels; arrays are (T, nb, b[, b])

@njit(cache=True)
def _psd_guard(P):
    b = P.shape[0]
    if b == 1:
        if P[0, 0] < 0.0:
            P[0, 0] = 0.0
        return
    for r in range(b):
        for c in range(r + 1, b):
            s = 0.5 * (P[r, c] + P[c, r])
            P[r, c] = s
            P[c, r] = s
    w, V = np.linalg.eigh(P)
    if w[0] < 0.0:
        for r in range(b):
            if w[r] < 0.0:
                w[r] = 0.0
        P[:, :] = (V * w) @ V.T
        for r in range(b):
            for c in range(r + 1, b):
                s = 0.5 * (P[r, c] + P[c, r])
                P[r, c] = s
                P[c, r] = s


@njit(cache=True)
def _reg_inverse(P):
    b = P.shape[0]
    tr = 0.0
    for r in range(b):
        tr += P[r, r]
    eps = 1e-8 * (1.0 + tr / b)
    if b == 1:
        out = np.empty((1, 1))
        out[0, 0] = 1.0 / (P[0, 0] + eps)
        return out
    Q = P.copy()
    for r in range(b):
        Q[r, r] += eps
    return np.linalg.inv(Q)


@njit(cache=True)
def _finite(x):
    for v in x.ravel():
        if not np.isfinite(v):
            return False
    return True


@njit(cache=True)
def _filter_kernel(G, h, a0, a1, bb, m0, P0, dt, mu, R):
    T, nb, b = a0.shape
    for k in range(nb):
        mu[0, k] = m0[k]
        R[0, k] = P0[k]
    for j in range(T - 1):
        for k in range(nb):
            m = mu[j, k]
            P = R[j, k]
            A = a1[j, k]
            dm = a0[j, k] + A @ m + P @ (h[j, k] - G[j, k] @ m)
            dP = A @ P + P @ A.T - P @ G[j, k] @ P
            for r in range(b):
                dP[r, r] += bb[k, r]
            mu[j + 1, k] = m + dt * dm
            Pn = P + dt * dP
            _psd_guard(Pn)
            R[j + 1, k] = Pn
            if not (_finite(Pn) and _finite(mu[j + 1, k])):
                return j + 1
    return -1


@njit(cache=True)
def _backward_drift(a0, A, bb, Rinv, muf, y):
    """``-a0 - a1 y + b b^T R_f^{-1} (mu_f - y)``."""
    g = Rinv @ (muf - y)
    out = -a0 - A @ y
    for r in range(y.shape[0]):
        out[r] += bb[r] * g[r]
    return out


@njit(cache=True)
def _smoother_kernel(a0, a1, bb, muf, Rf, dt, mus, Rs):
    T, nb, b = a0.shape
    mus[T - 1] = muf[T - 1]
    Rs[T - 1] = Rf[T - 1]
    for j in range(T - 2, -1, -1):
        for k in range(nb):
            A = a1[j + 1, k]
            Rinv = _reg_inverse(Rf[j + 1, k])
            K = A.copy()
            for r in range(b):
                for c in range(b):
                    K[r, c] += bb[k, r] * Rinv[r, c]
            y = mus[j + 1, k]
            mus[j, k] = y + dt * _backward_drift(a0[j + 1, k], A, bb[k], Rinv, muf[j + 1, k], y)
            P = Rs[j + 1, k]
            dP = -(K @ P) - P @ K.T
            for r in range(b):
                dP[r, r] += bb[k, r]
            Pn = P + dt * dP
            _psd_guard(Pn)
            Rs[j, k] = Pn
            if not (_finite(Pn) and _finite(mus[j, k])):
                return j
    return -1


@njit(cache=True)
def _sqrt_psd(P):
    b = P.shape[0]
    if b == 1:
        out = np.empty((1, 1))
        out[0, 0] = np.sqrt(max(P[0, 0], 0.0))
        return out
    w, V = np.linalg.eigh(0.5 * (P + P.T))
    for r in range(b):
        w[r] = np.sqrt(max(w[r], 0.0))
    return V * w


@njit(cache=True)
def _sampler_kernel(a0, a1, bb, muf, Rf, mT, RT, eps, dt, Y):
    T, nb, b = a0.shape
    sq = np.sqrt(dt)
    for k in range(nb):
        Y[T - 1, k] = mT[k] + _sqrt_psd(RT[k]) @ eps[T - 1, k]
    for j in range(T - 2, -1, -1):
        for k in range(nb):
            A = a1[j + 1, k]
            Rinv = _reg_inverse(Rf[j + 1, k])
            y = Y[j + 1, k]
            nxt = y + dt * _backward_drift(a0[j + 1, k], A, bb[k], Rinv, muf[j + 1, k], y)
            for r in range(b):
                nxt[r] += np.sqrt(bb[k, r]) * sq * eps[j, k, r]
            Y[j, k] = nxt
            if not _finite(nxt):
                return j
    return -1


@njit(cache=True)
def _filter_scalar(G, h, a0, a1, bb, m0, P0, dt, mu, R):
    T, nb = a0.shape
    for k in range(nb):
        mu[0, k] = m0[k]
        R[0, k] = P0[k]
    for j in range(T - 1):
        for k in range(nb):
            m = mu[j, k]
            P = R[j, k]
            A = a1[j, k]
            mn = m + dt * (a0[j, k] + A * m + P * (h[j, k] - G[j, k] * m))
            Pn = P + dt * (2.0 * A * P + bb[k] - P * G[j, k] * P)
            if Pn < 0.0:
                Pn = 0.0
            mu[j + 1, k] = mn
            R[j + 1, k] = Pn
            if not (np.isfinite(mn) and np.isfinite(Pn)):
                return j + 1
    return -1


@njit(cache=True)
def _smoother_scalar(a0, a1, bb, muf, Rf, dt, mus, Rs):
    T, nb = a0.shape
    mus[T - 1] = muf[T - 1]
    Rs[T - 1] = Rf[T - 1]
    for j in range(T - 2, -1, -1):
        for k in range(nb):
            A = a1[j + 1, k]
            rf = Rf[j + 1, k]
            Rinv = 1.0 / (rf + 1e-8 * (1.0 + rf))
            y = mus[j + 1, k]
            mus[j, k] = y + dt * (-a0[j + 1, k] - A * y + bb[k] * (Rinv * (muf[j + 1, k] - y)))
            K = A + bb[k] * Rinv
            P = Rs[j + 1, k]
            Pn = P + dt * (-2.0 * K * P + bb[k])
            if Pn < 0.0:
                Pn = 0.0
            Rs[j, k] = Pn
            if not (np.isfinite(Pn) and np.isfinite(mus[j, k])):
                return j
    return -1


@njit(cache=True)
def _sampler_scalar(a0, a1, bb, muf, Rf, mT, RT, eps, dt, Y):
    T, nb = a0.shape
    sq = np.sqrt(dt)
    for k in range(nb):
        Y[T - 1, k] = mT[k] + np.sqrt(max(RT[k], 0.0)) * eps[T - 1, k]
    for j in range(T - 2, -1, -1):
        for k in range(nb):
            A = a1[j + 1, k]
            rf = Rf[j + 1, k]
            Rinv = 1.0 / (rf + 1e-8 * (1.0 + rf))
            y = Y[j + 1, k]
            nxt = y + dt * (-a0[j + 1, k] - A * y + bb[k] * (Rinv * (muf[j + 1, k] - y)))
            nxt += np.sqrt(bb[k]) * sq * eps[j, k]
            Y[j, k] = nxt
            if not np.isfinite(nxt):
                return j
    return -1


# ---------------------------------------------------------------------------

def _observed_matrix(model: CoefficientModel, observed: TrajectorySet) -> np.ndarray:
    lay = model.layout
    Z = np.zeros((observed.n_samples, lay.n))
    names = set(observed.names)
    for i in lay.observed_indices:
        nm = lay.names[i]
        if nm not in names:
            raise StructuralError(f"observed data lacks variable {nm!r}")
        Z[:, i] = observed.values[:, observed.names.index(nm)]
    return Z


class ConditionalGaussian:
    """Filter, smoother and sampler for one model conditioned on one observed path.

    Parameters
    ----------
    model
        Coefficient model that casts to conditional-Gaussian form.
    observed
        Trajectory containing every observed variable of ``model.layout``
        (matched by name). Extra columns are ignored.
    filter_init
        ``(mean, scale)``: initial filter mean (scalar or one entry per hidden
        variable) and covariance ``scale * I``.
    """

    def __init__(self, model: CoefficientModel, observed: TrajectorySet, filter_init=(0.0, 1.0)):
        lay = model.layout
        if not lay.hidden_indices:
            raise StructuralError("model has no hidden variables")
        obs_noise = model.noise[list(lay.observed_indices)]
        if np.any(obs_noise <= 0):
            raise ConfigurationError("observed-row noise must be strictly positive (B1 B1^T singular)")
        self.model = model
        self.dt = observed.dt
        self.partition = partition_blocks(model)
        self.hidden = lay.hidden_indices
        m0, c0 = filter_init
        m0 = np.broadcast_to(np.asarray(m0, dtype=float), (len(self.hidden),))
        if not float(c0) >= 0:
            raise ConfigurationError("filter covariance scale must be nonnegative")
        self._m0 = m0
        self._c0 = float(c0)
        self._prepare(_observed_matrix(model, observed))

    def _prepare(self, Z: np.ndarray):
        form = self.model.cg_form(Z)
        T = Z.shape[0]
        dt = self.dt
        lam = form.B1 ** 2
        resid = np.zeros_like(form.A0)
        X = Z[:, list(form.obs)]
        resid[:-1] = (X[1:] - X[:-1]) / dt - form.A0[:-1]
        pos_h = {v: p for p, v in enumerate(form.hid)}
        blocks = self.partition.blocks
        where = {}
        for bid, blk in enumerate(blocks):
            for q, v in enumerate(blk):
                where[pos_h[v]] = (bid, q)
        by_size: dict[int, list] = {}
        for bid, blk in enumerate(blocks):
            by_size.setdefault(len(blk), []).append(bid)
        self._groups = []
        gindex = {}
        for b, ids in sorted(by_size.items()):
            nb = len(ids)
            g = dict(ids=np.array(ids), G=np.zeros((T, nb, b, b)), h=np.zeros((T, nb, b)),
                     a0=np.zeros((T, nb, b)), a1=np.zeros((T, nb, b, b)), bb=np.zeros((nb, b)),
                     m0=np.zeros((nb, b)), P0=np.zeros((nb, b, b)))
            for s, bid in enumerate(ids):
                for q, v in enumerate(blocks[bid]):
                    p = pos_h[v]
                    gindex[bid] = (len(self._groups), s)
                    g["a0"][:, s, q] = form.a0[:, p]
                    g["bb"][s, q] = form.b2[p] ** 2
                    g["m0"][s, q] = self._m0[p]
                    g["P0"][s, q, q] = self._c0
            self._groups.append(g)
        for (i, p), series in form.a1.items():
            bid, q = where[i]
            bid2, q2 = where[p]
            gi, s = gindex[bid]
            self._groups[gi]["a1"][:, s, q, q2] += series
        rows: dict[int, list] = {}
        for (i, p), series in form.A1.items():
            rows.setdefault(i, []).append((p, series))
        for i, entries in rows.items():
            for p, sp in entries:
                bid, q = where[p]
                gi, s = gindex[bid]
                g = self._groups[gi]
                g["h"][:, s, q] += sp * resid[:, i] / lam[i]
                for p2, sp2 in entries:
                    _, q2 = where[p2]
                    g["G"][:, s, q, q2] += sp * sp2 / lam[i]
        self.n_steps = T

    def filter(self) -> GaussianPath:
        out = []
        for g in self._groups:
            T, nb, b = g["a0"].shape
            mu = np.empty((T, nb, b))
            R = np.empty((T, nb, b, b))
            if b == 1:
                bad = _filter_scalar(g["G"][:, :, 0, 0], g["h"][:, :, 0], g["a0"][:, :, 0], g["a1"][:, :, 0, 0],
                                     g["bb"][:, 0], g["m0"][:, 0], g["P0"][:, 0, 0], self.dt,
                                     mu[:, :, 0], R[:, :, 0, 0])
            else:
                bad = _filter_kernel(g["G"], g["h"], g["a0"], g["a1"], g["bb"], g["m0"], g["P0"], self.dt, mu, R)
            if bad >= 0:
                raise DivergenceError(bad)
            out.append((g["ids"], mu, R))
        return GaussianPath(FILTER, self.partition, self.hidden, self.dt, out)

    def _check(self, path: GaussianPath, kind: str):
        if path.kind != kind:
            raise StructuralError(f"expected a {kind} path, got {path.kind}")
        if path.n_steps != self.n_steps or path.partition != self.partition:
            raise StructuralError(f"{kind} path does not match this model and time grid")

    def smooth(self, filter_path: GaussianPath | None = None) -> GaussianPath:
        fp = self.filter() if filter_path is None else filter_path
        self._check(fp, FILTER)
        out = []
        for g, (ids, muf, Rf) in zip(self._groups, fp.block_arrays()):
            mus = np.empty_like(muf)
            Rs = np.empty_like(Rf)
            if muf.shape[2] == 1:
                bad = _smoother_scalar(g["a0"][:, :, 0], g["a1"][:, :, 0, 0], g["bb"][:, 0], muf[:, :, 0],
                                       Rf[:, :, 0, 0], self.dt, mus[:, :, 0], Rs[:, :, 0, 0])
            else:
                bad = _smoother_kernel(g["a0"], g["a1"], g["bb"], muf, Rf, self.dt, mus, Rs)
            if bad >= 0:
                raise DivergenceError(bad)
            out.append((ids, mus, Rs))
        return GaussianPath(SMOOTHER, self.partition, self.hidden, self.dt, out)

    def sample(self, seed, filter_path: GaussianPath | None = None,
               smoother_path: GaussianPath | None = None) -> TrajectorySet:
        """Draw one hidden path from the smoothing distribution.

        Only the terminal smoother statistics are needed; they equal the
        terminal filter statistics, so ``smoother_path`` may be omitted.
        """
        fp = self.filter() if filter_path is None else filter_path
        self._check(fp, FILTER)
        if smoother_path is not None:
            self._check(smoother_path, SMOOTHER)
            terminal = smoother_path.block_arrays()
        else:
            terminal = fp.block_arrays()
        rng = np.random.default_rng(seed)
        T = self.n_steps
        out = np.empty((T, len(self.hidden)))
        pos = {v: p for p, v in enumerate(self.hidden)}
        for g, (ids, muf, Rf), (_, mT, RT) in zip(self._groups, fp.block_arrays(), terminal):
            _, nb, b = g["a0"].shape
            eps = rng.standard_normal((T, nb, b))
            Y = np.empty((T, nb, b))
            if b == 1:
                bad = _sampler_scalar(g["a0"][:, :, 0], g["a1"][:, :, 0, 0], g["bb"][:, 0], muf[:, :, 0],
                                      Rf[:, :, 0, 0], mT[T - 1][:, 0], RT[T - 1][:, 0, 0], eps[:, :, 0],
                                      self.dt, Y[:, :, 0])
            else:
                bad = _sampler_kernel(g["a0"], g["a1"], g["bb"], muf, Rf, mT[T - 1], RT[T - 1], eps, self.dt, Y)
            if bad >= 0:
                raise DivergenceError(bad)
            cols = [pos[v] for bid in ids for v in self.partition.blocks[bid]]
            out[:, cols] = Y.reshape(T, -1)
        lay = self.model.layout
        return TrajectorySet(lay, self.dt, out, self.hidden, ("sampled-hidden",) * len(self.hidden))


def filter_forward(model: CoefficientModel, observed: TrajectorySet, filter_init=(0.0, 1.0)) -> GaussianPath:
    return ConditionalGaussian(model, observed, filter_init).filter()


def smooth_backward(model: CoefficientModel, observed: TrajectorySet, filter_path: GaussianPath,
                    filter_init=(0.0, 1.0)) -> GaussianPath:
    return ConditionalGaussian(model, observed, filter_init).smooth(filter_path)


def sample_hidden(model: CoefficientModel, observed: TrajectorySet, filter_path: GaussianPath,
                  smoother_path: GaussianPath | None, seed, filter_init=(0.0, 1.0)) -> TrajectorySet:
    return ConditionalGaussian(model, observed, filter_init).sample(seed, filter_path, smoother_path)
