"""Independent reference computations used by the tests.

Everything here is written directly from the textbook equations in plain
numpy (dense matrices, no blocks, no compiled kernels) so it shares no code
with the package.
"""

import numpy as np


def kalman_bucy(X, dt, A0, A1, B1, a0, a1, b2, m0, P0):
    """Euler-discretized Kalman-Bucy filter for constant-coefficient linear systems.

    ``X`` is ``(T, N1)``; ``A1`` is ``N1 x N2``; ``B1``/``b2`` are vectors of
    diagonal amplitudes. Returns means ``(T, N2)`` and covariances ``(T, N2, N2)``.
    """
    T = X.shape[0]
    N2 = a1.shape[0]
    Binv = np.diag(1.0 / np.asarray(B1) ** 2)
    Q = np.diag(np.asarray(b2) ** 2)
    mu = np.zeros((T, N2))
    R = np.zeros((T, N2, N2))
    mu[0], R[0] = m0, P0
    for j in range(T - 1):
        m, P = mu[j], R[j]
        dX = (X[j + 1] - X[j]) / dt
        gain = P @ A1.T @ Binv
        mu[j + 1] = m + dt * (a0 + a1 @ m + gain @ (dX - A0 - A1 @ m))
        R[j + 1] = P + dt * (a1 @ P + P @ a1.T + Q - gain @ A1 @ P)
        R[j + 1] = 0.5 * (R[j + 1] + R[j + 1].T)
    return mu, R


def cg_smoother(mu_f, R_f, dt, a0, a1, b2):
    """Backward Euler sweep of the conditional-Gaussian smoother equations."""
    T, N2 = mu_f.shape
    Q = np.diag(np.asarray(b2) ** 2)
    mu = np.zeros_like(mu_f)
    R = np.zeros_like(R_f)
    mu[-1], R[-1] = mu_f[-1], R_f[-1]
    for j in range(T - 2, -1, -1):
        Rinv = np.linalg.inv(R_f[j + 1])
        K = a1 + Q @ Rinv
        y = mu[j + 1]
        mu[j] = y + dt * (-a0 - a1 @ y + Q @ Rinv @ (mu_f[j + 1] - y))
        P = R[j + 1]
        R[j] = P + dt * (Q - K @ P - P @ K.T)
    return mu, R


def discrete_kalman_rts(X, dt, A0, A1, B1, a0, a1, b2, m0, P0):
    """Exact filter and Rauch-Tung-Striebel smoother of the Euler-Maruyama
    state-space model

        Y[j+1] = Y[j] + (a0 + a1 Y[j]) dt + b2 sqrt(dt) eps
        X[j+1] - X[j] = (A0 + A1 Y[j]) dt + B1 sqrt(dt) eta

    The filtered law at step j conditions on ``X[0..j]``, like the continuous
    filter sampled on the grid.
    """
    T = X.shape[0]
    N2 = a1.shape[0]
    F = np.eye(N2) + dt * a1
    Q = np.diag(np.asarray(b2) ** 2) * dt
    S0 = np.diag(np.asarray(B1) ** 2) * dt
    H = A1 * dt
    mu = np.zeros((T, N2))
    R = np.zeros((T, N2, N2))
    mu[0], R[0] = m0, P0
    # law of Y[j] given X[0..j+1], i.e. after absorbing the increment it drives
    mc = np.zeros((T, N2))
    Pc = np.zeros((T, N2, N2))
    for j in range(T - 1):
        m, P = mu[j], R[j]
        K = P @ H.T @ np.linalg.inv(H @ P @ H.T + S0)
        mc[j] = m + K @ ((X[j + 1] - X[j]) - (A0 * dt + H @ m))
        Pc[j] = P - K @ H @ P
        mu[j + 1] = F @ mc[j] + a0 * dt
        R[j + 1] = F @ Pc[j] @ F.T + Q
    ms = np.zeros_like(mu)
    Rs = np.zeros_like(R)
    ms[-1], Rs[-1] = mu[-1], R[-1]
    for j in range(T - 2, -1, -1):
        G = Pc[j] @ F.T @ np.linalg.inv(R[j + 1])
        ms[j] = mc[j] + G @ (ms[j + 1] - mu[j + 1])
        Rs[j] = Pc[j] + G @ (Rs[j + 1] - R[j + 1]) @ G.T
    return mu, R, ms, Rs


def importance_particle_smoother(X, dt, A0, A1, B1, a0, a1, b2, m0, P0, n_particles, rng, record_every=1):
    """Sequential importance sampling for one observed and one hidden variable.

    Particles are independent hidden paths drawn from the prior dynamics of the
    Euler-Maruyama model above and weighted by the likelihood of the observed
    increments; there is no resampling, so the particles stay independent and
    the delta-method standard errors of the self-normalized estimates are
    valid. The filter at step ``j`` uses increments ``0..j-1``, the smoother
    uses all of them.

    Returns ``steps`` and a dict with filter and smoother ``mean``, ``var``
    and their standard errors on those steps, plus the effective sample size
    of the final weights.
    """
    A0, A1, B1, a0, a1, b2 = (float(np.ravel(v)[0]) for v in (A0, A1, B1, a0, a1, b2))
    x = np.asarray(X, dtype=float).reshape(-1)
    T = x.size
    N = int(n_particles)
    obs_var = B1 * B1 * dt
    tr_sd = b2 * np.sqrt(dt)
    steps = np.arange(0, T, int(record_every))
    if steps[-1] != T - 1:
        steps = np.append(steps, T - 1)
    store = np.empty((steps.size, N))
    y = m0 + np.sqrt(P0) * rng.standard_normal(N)
    lw = np.zeros(N)
    filt = {k: np.empty(steps.size) for k in ("mean", "var", "se_mean", "se_var")}

    def weighted(vals, logw):
        w = np.exp(logw - logw.max())
        w /= w.sum()
        m = float(w @ vals)
        d = vals - m
        v = float(w @ d ** 2)
        return m, v, np.sqrt(float(w ** 2 @ d ** 2)), np.sqrt(float(w ** 2 @ (d ** 2 - v) ** 2))

    r = 0
    for j in range(T):
        if r < steps.size and steps[r] == j:
            store[r] = y
            for k, v in zip(("mean", "var", "se_mean", "se_var"), weighted(y, lw)):
                filt[k][r] = v
            r += 1
        if j < T - 1:
            resid = (x[j + 1] - x[j]) - (A0 + A1 * y) * dt
            lw = lw - 0.5 * resid * resid / obs_var
            y = y + (a0 + a1 * y) * dt + tr_sd * rng.standard_normal(N)
    smooth = {k: np.empty(steps.size) for k in filt}
    for r in range(steps.size):
        for k, v in zip(("mean", "var", "se_mean", "se_var"), weighted(store[r], lw)):
            smooth[k][r] = v
    w = np.exp(lw - lw.max())
    ess = float(w.sum() ** 2 / (w @ w))
    return steps, {"filter": filt, "smoother": smooth, "ess": ess}
