import math

import numpy as np
import pytest

from cglearn.dynamics import CoefficientModel, StateLayout, TermLibrary, TrajectorySet, catalog, make_term, simulate
from cglearn.errors import StructuralError
from cglearn.estimation import (ConstraintSet, assemble_regression, build_energy_constraints, estimate,
                                mle_constrained, mle_unconstrained)


def ou_library():
    lay = StateLayout.dense(["z"], [True])
    return TermLibrary(lay, ((make_term(lay, 0, ((0, 1),)), make_term(lay, 0, ())),))


def ols(M, y):
    return np.linalg.lstsq(M, y, rcond=None)[0]


@pytest.fixture(scope="module")
def ou_data():
    lib = ou_library()
    m = CoefficientModel(lib, (np.array([-1.0, 0.0]),), [0.5])
    return lib, simulate(m, [0.0], 500.0, 1e-3, 2024, burn_in=5.0)


def test_ou_recovery_and_ar1_oracle(ou_data):
    lib, tr = ou_data
    res = estimate(tr, lib, lib.full_indicator(), constrained=False)
    z = tr.values[:, 0]
    # discrete AR(1) regression z[j+1] = phi z[j] + c + noise
    phi, c = ols(np.column_stack([z[:-1], np.ones(z.size - 1)]), z[1:])
    a_oracle = (phi - 1.0) / tr.dt
    assert res.theta[0] == pytest.approx(a_oracle, rel=1e-8)
    assert res.theta[1] == pytest.approx(c / tr.dt, rel=1e-6, abs=1e-10)
    # drift error of a single path is O(sqrt(2a/T)); noise is pinned much tighter
    assert abs(res.theta[0] + 1.0) < 4 * math.sqrt(2.0 / 500.0)
    assert abs(res.noise[0] - 0.5) / 0.5 < 0.02


def test_quadratic_variation_consistency(ou_data):
    lib, tr = ou_data
    reg = assemble_regression(tr, lib, lib.full_indicator())
    dz = np.diff(tr.values[:, 0])
    assert reg.quadratic_variation()[0] == pytest.approx(float(dz @ dz) / dz.size, rel=1e-12)
    assert mle_unconstrained(reg).sigma[0] == pytest.approx(float(dz @ dz) / dz.size, rel=1e-12)


def test_objective_not_above_zero_parameters(ou_data):
    lib, tr = ou_data
    reg = assemble_regression(tr, lib, lib.full_indicator())
    res = mle_unconstrained(reg)
    dz = np.diff(tr.values[:, 0])
    sig = res.sigma[0]
    at_zero = 0.5 * float(dz @ dz) / sig + 0.5 * dz.size * math.log(sig)
    assert res.objective <= at_zero


def test_single_term_design():
    lib = ou_library()
    z = np.linspace(1.0, 2.0, 50)
    tr = TrajectorySet(lib.layout, 0.01, z[:, None])
    reg = assemble_regression(tr, lib, (np.array([True, False]),), fixed={(0, 1): 0.0})
    M, s, target = reg.design(0)
    theta = 0.3
    assert np.allclose(s + M[:, 0] * theta, z[:-1] * (1 + theta * 0.01))


def test_nothing_retained_gives_quadratic_variation():
    lib = ou_library()
    rng = np.random.default_rng(0)
    z = np.cumsum(rng.standard_normal(1000))
    tr = TrajectorySet(lib.layout, 0.01, z[:, None])
    reg = assemble_regression(tr, lib, (np.array([False, True]),), fixed={(0, 1): 0.0})
    assert reg.P == 0
    res = mle_unconstrained(reg)
    assert res.theta.size == 0
    dz = np.diff(z)
    assert res.sigma[0] == pytest.approx(float(dz @ dz) / dz.size)


def test_noiseless_linear_data_exact():
    lib = ou_library()
    dt = 1e-2
    z = [1.0]
    for _ in range(2000):
        z.append(z[-1] + dt * (-0.7 * z[-1] + 0.3))
    tr = TrajectorySet(lib.layout, dt, np.array(z)[:, None])
    res = estimate(tr, lib, lib.full_indicator(), constrained=False)
    assert np.allclose(res.theta, [-0.7, 0.3], rtol=1e-9, atol=1e-9)


def pair_setup(seed=0, T=500.0, dt=1e-3, noise=0.1):
    # two observed rows: da = (theta1 * b^2 - a) dt + ..., db = (theta2 * a b - b + 1) dt + ...
    # energy a*b^2: theta1 + theta2 = 0
    lay = StateLayout.dense(["a", "b"], [True, True])
    rows = ((make_term(lay, 0, ((1, 2),)), make_term(lay, 0, ((0, 1),)), make_term(lay, 0, ())),
            (make_term(lay, 1, ((0, 1), (1, 1))), make_term(lay, 1, ((1, 1),)), make_term(lay, 1, ())))
    lib = TermLibrary(lay, rows, energy_pairs=(((0, 0), (1, 0)),))
    truth = CoefficientModel(lib, (np.array([2.0, -1.0, 0.0]), np.array([-2.0, -1.0, 1.0])), [noise, noise])
    tr = simulate(truth, [0.1, 0.5], T, dt, seed, burn_in=2.0)
    return lib, tr


def test_constrained_pair_recovery_and_kkt_oracle():
    lib, tr = pair_setup()
    ind = lib.full_indicator()
    reg = assemble_regression(tr, lib, ind)
    cs = build_energy_constraints(lib, ind)
    assert cs.K == 1
    res = mle_constrained(reg, cs)
    assert np.max(np.abs(cs.h @ res.theta - cs.g)) <= 1e-10
    th = dict(zip(res.params, res.theta))
    assert th[(0, 0)] + th[(1, 0)] == 0.0
    assert abs(th[(0, 0)] - 2.0) / 2.0 < 0.05
    assert abs(th[(1, 0)] + 2.0) / 2.0 < 0.05
    # KKT system of the weighted least-squares problem, solved densely
    blocks, rhs = [], []
    for n in range(2):
        M, s, zn = reg.design(n)
        blocks.append(M.T @ M / res.sigma[n])
        rhs.append(M.T @ (zn - s) / res.sigma[n])
    D = np.zeros((reg.P, reg.P))
    D[:3, :3], D[3:, 3:] = blocks
    c = np.concatenate(rhs)
    K = np.block([[D, cs.h.T], [cs.h, np.zeros((1, 1))]])
    sol = np.linalg.solve(K, np.concatenate([c, cs.g]))
    assert np.allclose(res.theta, sol[:reg.P], rtol=1e-8, atol=1e-10)
    assert np.allclose(res.lam, sol[reg.P:], rtol=1e-6, atol=1e-10)


def test_constraint_met_by_unconstrained_optimum_has_zero_multiplier():
    lib, tr = pair_setup(seed=3, T=50.0)
    reg = assemble_regression(tr, lib, lib.full_indicator())
    free = mle_unconstrained(reg)
    h = np.zeros((1, reg.P))
    h[0, 1] = 1.0
    res = mle_constrained(reg, ConstraintSet(h, [free.theta[1]]))
    assert abs(res.lam[0]) < 1e-8 * max(1.0, float(np.max(np.abs(free.theta))))
    assert np.allclose(res.theta, free.theta, rtol=1e-9, atol=1e-12)


def test_constraint_set_validation():
    with pytest.raises(StructuralError):
        ConstraintSet(np.array([[1.0, 1.0], [2.0, 2.0]]), [0.0, 0.0])
    with pytest.raises(StructuralError):
        ConstraintSet(np.array([[1.0, 1.0]]), [0.0, 0.0])


def test_l84_true_structure_has_twelve_parameters():
    m = catalog.lorenz84_truth()
    tr = TrajectorySet(m.layout, 1e-3, np.zeros((20, 3)))
    assert assemble_regression(tr, m.library, m.indicator()).P == 12


def test_fully_observed_l84_recovery():
    m = catalog.lorenz84_truth()
    tr = simulate(m, [0.1, 0.1, 0.1], 500.0, 1e-3, 7, burn_in=10.0)
    res = estimate(tr, m.library, m.indicator(), constrained=False)
    reg = assemble_regression(tr, m.library, m.indicator())
    truth = np.array([m.xi[n][j] for n, j in reg.params])
    k = 0
    for n in range(3):
        M, s, zn = reg.design(n)
        p = M.shape[1]
        # per-row ordinary least squares on the same design as an independent oracle
        assert np.allclose(res.theta[k:k + p], ols(M, zn - s), rtol=1e-8, atol=1e-10)
        se = np.sqrt(np.diag(np.linalg.inv(M.T @ M)) * res.sigma[n])
        assert np.all(np.abs(res.theta[k:k + p] - truth[k:k + p]) < 4 * se)
        k += p


def test_l96_initial_guess_constraints():
    g = catalog.lorenz96_initial_guess("I")
    cs = build_energy_constraints(g.library, g.indicator())
    assert cs.K == 40
    assert all("+" in lab for lab in cs.labels)


def test_fhn_variant_two_constraints():
    g = catalog.fhn_initial_guess(2)
    cs = build_energy_constraints(g.library, g.indicator())
    u_only = [lab for lab in cs.labels if ":" in lab and lab.split(" + ")[1].startswith("u")]
    assert len(u_only) == 3 * 40
    assert cs.K == 4 * 40


def test_no_quadratic_terms_empty_constraints():
    lib = catalog.lorenz96_library(8)
    ind = []
    for row in lib.rows:
        ind.append(np.array([t.degree <= 1 for t in row]))
    cs = build_energy_constraints(lib, ind)
    assert cs.K == 0
    assert cs.h.shape[1] == sum(int(i.sum()) for i in ind)


def test_single_retained_member_forced_to_zero():
    lib, tr = pair_setup(seed=1, T=50.0)
    ind = lib.full_indicator()
    ind[1][0] = False
    cs = build_energy_constraints(lib, ind)
    res = estimate(tr, lib, ind)
    assert cs.K == 1
    assert res.coefficients(lib)[0][0] == pytest.approx(0.0, abs=1e-12)
