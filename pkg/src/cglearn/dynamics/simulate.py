"""Euler-Maruyama simulation of coefficient models."""

from __future__ import annotations

import numpy as np
from numba import njit

from ..errors import BlowUpError, ConfigurationError, StructuralError
from .model import CoefficientModel, TrajectorySet, n_samples

_CHUNK = 4096


def compile_drift(model: CoefficientModel):
    """Flatten the nonzero terms into arrays consumed by the numba kernels."""
    rows, coefs, fac = [], [], []
    for n, (row, c) in enumerate(zip(model.library.rows, model.xi)):
        for t, v in zip(row, c):
            if v != 0.0:
                rows.append(n)
                coefs.append(v)
                fac.append(t.factors)
    width = max((len(f) for f in fac), default=0) or 1
    fidx = np.zeros((len(fac), width), dtype=np.int64)
    fexp = np.zeros((len(fac), width), dtype=np.int64)
    for k, f in enumerate(fac):
        for d, (v, e) in enumerate(f):
            fidx[k, d] = v
            fexp[k, d] = e
    return (np.array(rows, dtype=np.int64), np.array(coefs, dtype=float), fidx, fexp)


@njit(cache=True)
def _drift(z, out, rows, coefs, fidx, fexp):
    out[:] = 0.0
    for k in range(rows.shape[0]):
        v = coefs[k]
        for d in range(fidx.shape[1]):
            e = fexp[k, d]
            if e == 0:
                break
            x = z[fidx[k, d]]
            for _ in range(e):
                v *= x
        out[rows[k]] += v


@njit(cache=True)
def _em_chunk(z, out, noise, h, rows, coefs, fidx, fexp, amp):
    """Advance ``z`` in place over ``noise.shape[0]`` recorded steps of ``noise.shape[1]`` substeps.

    Writes the state after each recorded step into ``out`` (may be empty for
    burn-in) and returns the first failing step or -1.
    """
    n = z.shape[0]
    f = np.empty(n)
    sq = np.sqrt(h)
    record = out.shape[0] > 0
    for s in range(noise.shape[0]):
        for q in range(noise.shape[1]):
            _drift(z, f, rows, coefs, fidx, fexp)
            for i in range(n):
                z[i] += f[i] * h + amp[i] * sq * noise[s, q, i]
        for i in range(n):
            if not np.isfinite(z[i]):
                return s
        if record:
            out[s, :] = z
    return -1


def _advance(z, out, steps, substeps, h, compiled, amp, rng, offset):
    rows, coefs, fidx, fexp = compiled
    done = 0
    while done < steps:
        m = min(_CHUNK, steps - done)
        noise = rng.standard_normal((m, substeps, z.shape[0]))
        target = out[done:done + m] if out is not None else np.empty((0, z.shape[0]))
        bad = _em_chunk(z, target, noise, h, rows, coefs, fidx, fexp, amp)
        if bad >= 0:
            raise BlowUpError(offset + done + bad + 1)
        done += m


def simulate(model: CoefficientModel, initial, horizon: float, dt: float, seed,
             burn_in: float = 0.0, substeps: int = 1) -> TrajectorySet:
    """Simulate ``Z^{j+1} = Z^j + drift(Z^j) dt + sigma eps^j sqrt(dt)``.

    Returns ``floor(horizon / dt)`` samples starting at the state reached after
    ``burn_in`` time units. With ``substeps > 1`` each stored step is split into
    equal internal steps (for stiff systems); stored samples stay ``dt`` apart.
    Raises :class:`BlowUpError` with the step index (counted from the start of
    burn-in) when the state becomes non-finite.
    """
    if substeps < 1:
        raise ConfigurationError("substeps must be >= 1")
    if burn_in < 0:
        raise ConfigurationError("burn_in must be nonnegative")
    n = n_samples(horizon, dt)
    z = np.array(initial, dtype=float).reshape(-1).copy()
    if z.shape != (model.layout.n,):
        raise StructuralError(f"initial state must have length {model.layout.n}")
    if not np.all(np.isfinite(z)):
        raise BlowUpError(0, "initial state is not finite")
    rng = np.random.default_rng(seed)
    compiled = compile_drift(model)
    h = dt / substeps
    amp = np.asarray(model.noise, dtype=float).copy()
    nburn = int(round(burn_in / dt))
    if nburn:
        _advance(z, None, nburn, substeps, h, compiled, amp, rng, 0)
    out = np.empty((n, z.shape[0]))
    out[0] = z
    _advance(z, out[1:], n - 1, substeps, h, compiled, amp, rng, nburn)
    return TrajectorySet(model.layout, dt, out, roles=("simulated",) * model.layout.n)


def random_initial(model: CoefficientModel, rng, std: float = 0.1) -> np.ndarray:
    """Small Gaussian perturbation around the origin."""
    return std * np.random.default_rng(rng).standard_normal(model.layout.n)
