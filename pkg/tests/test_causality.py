import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cglearn.causality import (build_causation_matrix, causation_entropies, causation_entropy, frobenius_distance,
                               gaussian_entropy)
from cglearn.dynamics import StateLayout, TermLibrary, TrajectorySet, catalog, make_term, simulate
from cglearn.errors import PreconditionError, StructuralError

H1 = 0.5 * (1.0 + math.log(2.0 * math.pi))


def test_gaussian_entropy_values():
    assert gaussian_entropy([[1.0]]) == pytest.approx(1.41894, abs=1e-5)
    assert gaussian_entropy([[math.e ** 2]]) == pytest.approx(H1 + 1.0, abs=1e-8)
    assert gaussian_entropy(np.eye(2)) == pytest.approx(2 * H1, abs=1e-8)
    with pytest.raises(StructuralError):
        gaussian_entropy([[1.0, 0.5], [0.0, 1.0]])


def test_four_determinant_formula_from_entropies():
    # C = H(X|Y) - H(X|Y,Z) written with entropies of the sample covariance
    rng = np.random.default_rng(3)
    n = 20_000
    y = rng.standard_normal((n, 2))
    z = rng.standard_normal(n) + 0.5 * y[:, 0]
    x = y @ [0.3, -0.2] + 0.4 * z + rng.standard_normal(n)
    C = np.corrcoef(np.column_stack([x, y, z]).T)
    sub = lambda idx: C[np.ix_(idx, idx)]  # noqa: E731
    ref = (gaussian_entropy(sub([0, 1, 2])) - gaussian_entropy(sub([1, 2]))
           - gaussian_entropy(sub([0, 1, 2, 3])) + gaussian_entropy(sub([1, 2, 3])))
    F = np.column_stack([y, z])
    assert causation_entropy(x, F, 2) == pytest.approx(ref, abs=1e-8)
    assert causation_entropies(x, F)[0][2] == pytest.approx(ref, abs=1e-8)


def test_bivariate_closed_form():
    rng = np.random.default_rng(0)
    z = rng.standard_normal(100_000)
    x = z + rng.standard_normal(100_000)
    assert abs(causation_entropy(x, z, 0) - 0.5 * math.log(2.0)) < 1e-2


def test_conditionally_independent_feature():
    rng = np.random.default_rng(1)
    n = 100_000
    y = rng.standard_normal((n, 2))
    x = y @ [1.0, -0.5] + rng.standard_normal(n)
    z = rng.standard_normal(n)
    F = np.column_stack([y, z])
    assert causation_entropy(x, F, 2) < 1e-3
    vals, _ = causation_entropies(x, F)
    assert vals[2] < 1e-3 and vals[0] > 0.1


def test_duplicate_feature_is_redundant():
    rng = np.random.default_rng(2)
    z = rng.standard_normal(50_000)
    x = z + rng.standard_normal(50_000)
    F = np.column_stack([z, z])
    assert causation_entropy(x, F, 1) < 1e-6
    assert np.all(causation_entropies(x, F)[0] < 1e-6)


def test_precision_identity_matches_determinants():
    rng = np.random.default_rng(4)
    F = rng.standard_normal((5000, 5))
    F[:, 3] += 0.7 * F[:, 0]
    x = F @ [0.5, 0.0, -0.3, 0.2, 0.0] + rng.standard_normal(5000)
    fast, _ = causation_entropies(x, F)
    slow = [causation_entropy(x, F, m) for m in range(5)]
    assert np.allclose(fast, slow, atol=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.permutations(range(4)))
def test_permutation_invariance(perm):
    rng = np.random.default_rng(5)
    Y = rng.standard_normal((4000, 4))
    z = rng.standard_normal(4000) + Y[:, 1]
    x = Y.sum(axis=1) + z + rng.standard_normal(4000)
    a = causation_entropy(x, np.column_stack([Y, z]), 4)
    b = causation_entropy(x, np.column_stack([Y[:, list(perm)], z]), 4)
    assert a == pytest.approx(b, abs=1e-10)


def test_monotone_in_coupling():
    rng = np.random.default_rng(6)
    n = 100_000
    F = rng.standard_normal((n, 3))
    noise = rng.standard_normal(n)
    vals = [causation_entropies(b * F[:, 1] + noise, F)[0][1] for b in (0.1, 0.5, 1.0)]
    assert vals[0] < vals[1] < vals[2]


def test_too_few_samples():
    with pytest.raises(PreconditionError):
        causation_entropies(np.zeros(5), np.zeros((5, 3)))


def _ar_library():
    lay = StateLayout.dense(["a", "b"], [True, True])
    rows = tuple(tuple(make_term(lay, n, f) for f in (((0, 1),), ((1, 1),), ((0, 2),), ())) for n in range(2))
    return TermLibrary(lay, rows)


def test_pure_noise_target_below_threshold():
    lib = _ar_library()
    rng = np.random.default_rng(7)
    data = TrajectorySet(lib.layout, 1e-3, rng.standard_normal((200_000, 2)))
    cm = build_causation_matrix(data, lib, 1e-3)
    for v, t in zip(cm.values, cm.tested):
        assert np.all(v[t] < 1e-3)
    for ind, row in zip(cm.indicator, lib.rows):
        assert [bool(k) for k in ind] == [t.is_constant for t in row]


def test_raising_threshold_never_adds_terms():
    lib = _ar_library()
    rng = np.random.default_rng(8)
    a = np.cumsum(rng.standard_normal(50_000)) * 0.01
    b = np.sin(a) + 0.1 * rng.standard_normal(50_000)
    data = TrajectorySet(lib.layout, 1e-3, np.column_stack([a, b]))
    cm = build_causation_matrix(data, lib, 1e-6)
    prev = cm.indicator
    for th in (1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0):
        cur = cm.rethreshold(th).indicator
        for p, c in zip(prev, cur):
            assert not np.any(c & ~p)
        prev = cur


def test_l84_truth_structure_recovered():
    m = catalog.lorenz84_truth()
    tr = simulate(m, [0.1, 0.1, 0.1], 500.0, 1e-3, 19, burn_in=10.0)
    cm = build_causation_matrix(tr, m.library, 1e-3)
    assert frobenius_distance(cm.indicator, m.indicator()) == 0.0


def test_frobenius_examples():
    a = (np.ones(4, bool), np.ones(4, bool), np.ones(4, bool))
    b = (np.zeros(4, bool), np.zeros(4, bool), np.zeros(4, bool))
    assert frobenius_distance(a, a) == 0.0
    assert frobenius_distance(a, b) == pytest.approx(math.sqrt(12))
    c = (np.array([0, 0, 0, 1], bool), np.array([1, 0, 1, 1], bool), np.array([1, 1, 1, 0], bool))
    assert frobenius_distance(a, c) == pytest.approx(2.2361, abs=1e-4)
    with pytest.raises(StructuralError):
        frobenius_distance(a, a[:2])
