import math

import numpy as np
import pytest

from cglearn import stats
from cglearn.dynamics import StateLayout, TrajectorySet
from cglearn.errors import PreconditionError, StructuralError


def test_normal_density_at_zero():
    x = np.random.default_rng(0).standard_normal(1_000_000)
    p = stats.pdf(x, bins=100)
    k = np.searchsorted(p.bin_edges, 0.0) - 1
    assert p.density[k] == pytest.approx(1 / math.sqrt(2 * math.pi), rel=0.02)


def test_uniform_density_flat():
    x = np.random.default_rng(1).random(1_000_000)
    p = stats.pdf(x, bins=20)
    assert np.all(np.abs(p.density - 1.0) < 0.03)


def test_pdf_normalization_exact():
    x = np.random.default_rng(2).gamma(2.0, size=12345)
    p = stats.pdf(x, bins=37)
    assert abs(float(np.sum(p.density * p.widths)) - 1.0) < 1e-12
    assert p.bin_edges[0] == x.min() and p.bin_edges[-1] == x.max()


def test_constant_series_single_bin():
    p = stats.pdf(np.full(500, 3.0))
    assert p.density.size == 1
    assert abs(float(np.sum(p.density * p.widths)) - 1.0) < 1e-12
    assert p.bin_edges[0] < 3.0 < p.bin_edges[1]


def test_pdf_preconditions():
    with pytest.raises(PreconditionError):
        stats.pdf(np.arange(10.0), bins=100)
    with pytest.raises(PreconditionError):
        stats.pdf([0.0, np.nan] * 100, bins=5)


def test_white_noise_acf():
    x = np.random.default_rng(3).standard_normal(100_000)
    r = stats.acf(x, 50)
    assert r[0] == 1.0
    assert np.all(np.abs(r[1:]) < 3 / math.sqrt(x.size))


def test_ar1_acf_matches_exponential():
    # exact discretization of OU with rate a
    a, dt, n = 1.0, 0.01, 400_000
    phi = math.exp(-a * dt)
    rng = np.random.default_rng(4)
    e = rng.standard_normal(n) * math.sqrt(1 - phi ** 2)
    x = np.empty(n)
    x[0] = rng.standard_normal()
    for j in range(1, n):
        x[j] = phi * x[j - 1] + e[j]
    r = stats.acf(x, 200)
    lags = np.arange(201) * dt
    assert np.max(np.abs(r - np.exp(-a * lags))) < 0.02


def test_acf_matches_direct_sum():
    x = np.random.default_rng(5).standard_normal(3000).cumsum()
    r = stats.acf(x, 30)
    xc = x - x.mean()
    direct = np.array([xc[: xc.size - k] @ xc[k:] for k in range(31)]) / (xc @ xc)
    assert np.allclose(r, direct, atol=1e-12)
    assert np.all(np.abs(r) <= 1.0)


def test_acf_errors():
    with pytest.raises(PreconditionError):
        stats.acf(np.ones(100), 5)
    with pytest.raises(PreconditionError):
        stats.acf(np.arange(5.0), 5)


def _traj(values, names):
    lay = StateLayout.dense(names, [True] * len(names))
    return TrajectorySet(lay, 0.1, np.asarray(values, dtype=float))


def test_aggregate_identity_and_ones():
    rng = np.random.default_rng(6)
    v = rng.standard_normal((50, 2))
    tr = _traj(v, ["v1_1", "v2_1"])
    out = stats.aggregate_layer(tr, {"w1": ["v1_1"], "w2": ["v2_1"]})
    assert np.array_equal(out.values, v)
    ones = _traj(np.ones((10, 4)), ["a", "b", "c", "d"])
    assert np.all(stats.aggregate_layer(ones, {"w": ["a", "b", "c", "d"]}).values == 4.0)


def test_aggregate_linear():
    rng = np.random.default_rng(7)
    names = ["a", "b", "c"]
    x, y = rng.standard_normal((20, 3)), rng.standard_normal((20, 3))
    mp = {"p": ["a", "b"], "q": ["c", "a"]}
    lhs = stats.aggregate_layer(_traj(2 * x - 3 * y, names), mp).values
    rhs = 2 * stats.aggregate_layer(_traj(x, names), mp).values - 3 * stats.aggregate_layer(_traj(y, names), mp).values
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_aggregate_missing_column():
    with pytest.raises(StructuralError):
        stats.aggregate_layer(_traj(np.ones((5, 1)), ["a"]), {"w": ["a", "b"]})


def test_distances_zero_on_self():
    x = np.random.default_rng(8).standard_normal(5000)
    assert stats.pdf_distance(x, x) == 0.0
    assert stats.acf_distance(x, x, 20) == 0.0
    assert stats.pdf_distance(x, x + 10.0) == pytest.approx(2.0)


def test_write_series_stats(tmp_path):
    x = np.random.default_rng(9).standard_normal((2000, 2))
    files = stats.write_series_stats(tmp_path / "exp", _traj(x, ["a", "b"]), bins=10, max_lag_time=1.0)
    names = sorted(p.name for p in files)
    assert names == ["a_acf.csv", "a_pdf.csv", "b_acf.csv", "b_pdf.csv"]
    rows = (tmp_path / "exp" / "a_acf.csv").read_text().splitlines()
    assert rows[0] == "lag,acf" and len(rows) == 12
