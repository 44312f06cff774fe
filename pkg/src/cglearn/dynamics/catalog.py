"""Benchmark systems, their candidate libraries and starting models.

Three families are provided:

* ``lorenz84``: three-variable Lorenz 1984 circulation model with ``x`` hidden.
* ``lorenz96-two-layer``: two-layer Lorenz 1996 model. The true system lives on
  the full ``(u_i, v_{i,j})`` layout; learning targets the reduced ``(u_i, w_i)``
  layout where ``w_i`` stands for the aggregate ``sum_j v_{i,j}``.
* ``fhn-lattice``: stochastically coupled FitzHugh-Nagumo lattice with the
  recovery variables ``v_i`` hidden.
"""

from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np

from ..errors import ConfigurationError, StructuralError
from .model import (CoefficientModel, StateLayout, Term, TermLibrary, canonical_factors, make_term,
                    ring_term)

LORENZ84 = dict(a=0.25, b=4.0, f=8.0, g=1.0, sigma_x=0.1, sigma_y=0.1, sigma_z=0.1)
LORENZ96 = dict(I=20, J=4, b=2.0, f=4.0, sigma_u=0.05)
LORENZ96_REGIMES = {"I": dict(h=4.0, sigma_v=1.00), "II": dict(h=1.5, sigma_v=0.05)}
FHN = dict(N=40, eps=0.01, delta1=0.2, delta2=0.1, d_u=10.0, a=1.05)

NAMES = ("lorenz84", "lorenz96-two-layer", "fhn-lattice")


# ---------------------------------------------------------------------------
# helpers

def _term_lookup(library, row: int, factors) -> int:
    """Position of the term with ``factors`` in ``row``; ``library`` may be a TermLibrary or raw rows."""
    rows = library.rows if isinstance(library, TermLibrary) else library
    key = canonical_factors(factors)
    for m, t in enumerate(rows[row]):
        if t.factors == key:
            return m
    raise StructuralError(f"row {library.layout.names[row]!r} has no term with factors {key}")


def _ring_factors(layout: StateLayout, row: int, spec) -> tuple:
    pos = layout.site_of(row)[1]
    return canonical_factors((layout.resolve(g, pos, off), e) for g, off, e in spec)


def _energy_monomial(t: Term):
    return canonical_factors(t.factors + ((t.target, 1),))


def ring_energy_pairs(layout: StateLayout, rows, seeds) -> tuple:
    """Per-site energy pairs on ring libraries.

    ``seeds`` holds ``((group_a, spec_a), (group_b, shift, spec_b))``: the term
    ``spec_a`` in row ``group_a[i]`` pairs with ``spec_b`` in row
    ``group_b[i + shift]``; the pair must multiply into the same energy monomial.
    """
    pairs = []
    for (ga, spec_a), (gb, shift, spec_b) in seeds:
        for pos in range(len(layout.group(ga))):
            ra = layout.resolve(ga, pos)
            rb = layout.resolve(gb, pos, shift)
            ma = _term_lookup(rows, ra, _ring_factors(layout, ra, spec_a))
            mb = _term_lookup(rows, rb, _ring_factors(layout, rb, spec_b))
            if _energy_monomial(rows[ra][ma]) != _energy_monomial(rows[rb][mb]):
                raise StructuralError("declared energy pair does not share an energy monomial")
            pairs.append(((ra, ma), (rb, mb)))
    return tuple(pairs)


def stencil_offsets(radius: int) -> list[int]:
    """Offsets in library listing order: ``0, -1, ..., -s, +1, ..., +s``."""
    return [0] + [-k for k in range(1, radius + 1)] + list(range(1, radius + 1))


def local_terms(layout: StateLayout, row: int, group: str, radius: int, cubic: bool = False) -> list[Term]:
    """Linear, quadratic and (optionally) single-variable cubic terms on the stencil."""
    offs = stencil_offsets(radius)
    terms = [ring_term(layout, row, [(group, k, 1)]) for k in offs]
    terms += [ring_term(layout, row, [(group, k, 2)]) for k in offs]
    terms += [ring_term(layout, row, [(group, a, 1), (group, b, 1)]) for a, b in itertools.combinations(offs, 2)]
    if cubic:
        terms += [ring_term(layout, row, [(group, k, 3)]) for k in offs]
    return terms


def _model_from_spec(library: TermLibrary, spec: dict, noise) -> CoefficientModel:
    """``spec[row] = [(factors, value), ...]`` with absolute factors."""
    xi = [np.zeros(len(r)) for r in library.rows]
    for row, entries in spec.items():
        for factors, val in entries:
            xi[row][_term_lookup(library, row, factors)] += val
    return CoefficientModel(library, tuple(xi), noise)


def _require(params: dict, keys: Sequence[str], name: str):
    missing = [k for k in keys if params.get(k) is None]
    if missing:
        raise ConfigurationError(f"{name}: missing parameters {missing}")


# ---------------------------------------------------------------------------
# Lorenz 1984

L84_LIBRARY = ("y", "z", "y^2", "z^2", "y*z", "x", "x*y", "x*z", "1", "x*y^2", "x*z^2", "x*y*z")
L84_ENERGY_PAIRS = ((("x", "y^2"), ("y", "x*y")), (("x", "z^2"), ("z", "x*z")), (("y", "x*z"), ("z", "x*y")))


def lorenz84_layout() -> StateLayout:
    return StateLayout.dense(("x", "y", "z"), (False, True, True))


def _parse_dense(layout: StateLayout, label: str):
    if label == "1":
        return ()
    out = []
    for part in label.split("*"):
        name, _, exp = part.partition("^")
        out.append((layout.index(name), int(exp or 1)))
    return canonical_factors(out)


def lorenz84_library() -> TermLibrary:
    lay = lorenz84_layout()
    rows = tuple(tuple(make_term(lay, n, _parse_dense(lay, lab)) for lab in L84_LIBRARY) for n in range(3))
    lib = TermLibrary(lay, rows)
    pairs = tuple(((lay.index(ra), lib.term_index(lay.index(ra), la)), (lay.index(rb), lib.term_index(lay.index(rb), lb)))
                  for (ra, la), (rb, lb) in L84_ENERGY_PAIRS)
    return TermLibrary(lay, rows, energy_pairs=pairs)


def lorenz84_truth(**params) -> CoefficientModel:
    p = {**LORENZ84, **params}
    _require(p, LORENZ84, "lorenz84")
    a, b, f, g = p["a"], p["b"], p["f"], p["g"]
    coeffs = {
        ("x", "y^2"): -1.0, ("x", "z^2"): -1.0, ("x", "x"): -a, ("x", "1"): a * f,
        ("y", "x*z"): -b, ("y", "x*y"): 1.0, ("y", "y"): -1.0, ("y", "1"): g,
        ("z", "x*y"): b, ("z", "x*z"): 1.0, ("z", "z"): -1.0,
    }
    return CoefficientModel.from_terms(lorenz84_library(), coeffs, [p["sigma_x"], p["sigma_y"], p["sigma_z"]])


def lorenz84_initial_guess(sigma_x: float = 0.1, sigma_obs: float = 1.0) -> CoefficientModel:
    """The deliberately wrong, dense starting model used for the L-84 experiment."""
    coeffs = {
        ("x", "y^2"): 1.0, ("x", "z^2"): -1.0, ("x", "1"): 2.0, ("x", "x*y^2"): 1.0, ("x", "x*z^2"): -1.0,
        ("y", "y"): -1.0, ("y", "y^2"): -2.0, ("y", "z^2"): 1.0, ("y", "1"): 1.0,
        ("y", "x*y"): -1.0, ("y", "x*z"): -8.0, ("y", "x*y*z"): -1.0,
        ("z", "z"): -1.0, ("z", "z^2"): 1.0, ("z", "y*z"): -1.0,
        ("z", "x*y"): 8.0, ("z", "x*z"): 1.0, ("z", "x*z^2"): 1.0,
    }
    return CoefficientModel.from_terms(lorenz84_library(), coeffs, [sigma_x, sigma_obs, sigma_obs])


# ---------------------------------------------------------------------------
# two-layer Lorenz 1996

def lorenz96_c(I: int) -> np.ndarray:
    i = np.arange(1, I + 1)
    return 2.0 + 0.7 * np.cos(2 * np.pi * i / I)


def lorenz96_layout(I: int = 20) -> StateLayout:
    """Reduced learning layout: observed ``u_i`` and hidden aggregates ``w_i``."""
    return StateLayout.ring(I, {"u": True, "w": False})


def lorenz96_full_layout(I: int = 20, J: int = 4) -> StateLayout:
    return StateLayout.two_layer_ring(I, J, "u", "v")


def lorenz96_library(I: int = 20, stencil_radius: int = 2, hidden: bool = True) -> TermLibrary:
    """23 candidates per ``u_i`` and 4 per ``w_i``; ``hidden=False`` gives the u-only library."""
    lay = lorenz96_layout(I) if hidden else StateLayout.ring(I, {"u": True})
    rows = []
    for row in lay.group("u"):
        terms = local_terms(lay, row, "u", stencil_radius)
        terms.append(ring_term(lay, row, []))
        if hidden:
            terms += [ring_term(lay, row, [("w", 0, 1)]), ring_term(lay, row, [("u", 0, 1), ("w", 0, 1)])]
        rows.append(tuple(terms))
    if hidden:
        for row in lay.group("w"):
            rows.append((ring_term(lay, row, [("u", 0, 1)]), ring_term(lay, row, [("u", 0, 2)]),
                         ring_term(lay, row, []), ring_term(lay, row, [("w", 0, 1)])))
    rows = tuple(rows)
    seeds = []
    if stencil_radius >= 1:
        seeds += [(("u", [("u", 1, 2)]), ("u", 1, [("u", -1, 1), ("u", 0, 1)])),
                  (("u", [("u", 0, 1), ("u", 1, 1)]), ("u", 1, [("u", -1, 2)]))]
    if hidden:
        seeds.append((("u", [("u", 0, 1), ("w", 0, 1)]), ("w", 0, [("u", 0, 2)])))
    return TermLibrary(lay, rows, stencil_radius, ring_energy_pairs(lay, rows, seeds))


def _lorenz96_params(regime: str, params: dict) -> dict:
    if regime not in LORENZ96_REGIMES:
        raise ConfigurationError(f"lorenz96: unknown regime {regime!r} (expected I or II)")
    p = {**LORENZ96, **LORENZ96_REGIMES[regime], **params}
    _require(p, list(LORENZ96) + ["h", "sigma_v"], "lorenz96")
    return p


def lorenz96_truth(regime: str = "I", **params) -> CoefficientModel:
    """True two-layer model on the full ``(u_i, v_{i,j})`` layout."""
    p = _lorenz96_params(regime, params)
    I, J, b, f, h = int(p["I"]), int(p["J"]), p["b"], p["f"], p["h"]
    lay = lorenz96_full_layout(I, J)
    c = lorenz96_c(I)
    rows, spec = [], {}
    u, v = lay.group("u"), lay.group("v")
    for i in range(I):
        r = u[i]
        vs = [v[i * J + j] for j in range(J)]
        t = [((u[(i - 2) % I], 1), (u[(i - 1) % I], 1)), ((u[(i - 1) % I], 1), (u[(i + 1) % I], 1)), ((r, 1),), ()]
        t += [((k, 1),) for k in vs]
        rows.append(tuple(make_term(lay, r, fac) for fac in t))
        spec[r] = [(t[0], -1.0), (t[1], 1.0), (t[2], -1.0), (t[3], f)] + [(fac, -h * c[i] / J) for fac in t[4:]]
    K = I * J
    for k in range(K):
        i = k // J
        r = v[k]
        t = [((v[(k + 1) % K], 1), (v[(k + 2) % K], 1)), ((v[(k - 1) % K], 1), (v[(k + 1) % K], 1)),
             ((r, 1),), ((u[i], 1),), ()]
        rows.append(tuple(make_term(lay, r, fac) for fac in t))
        spec[r] = [(t[0], -b * c[i]), (t[1], b * c[i]), (t[2], -c[i]), (t[3], h * c[i] / J)]
    lib = TermLibrary(lay, tuple(rows), conditionally_linear=False)
    noise = np.r_[np.full(I, p["sigma_u"]), np.full(K, p["sigma_v"])]
    return _model_from_spec(lib, spec, noise)


def lorenz96_hidden_noise(regime: str = "I", **params) -> float:
    """Noise amplitude of ``w_i = sum_j v_{i,j}`` implied by independent ``v`` noises."""
    p = _lorenz96_params(regime, params)
    return math.sqrt(p["J"]) * p["sigma_v"]


def lorenz96_initial_guess(regime: str = "I", stencil_radius: int = 2, hidden: bool = True,
                           **params) -> CoefficientModel:
    """True ``u`` dynamics plus two energy-conserving advection pairs, linear ``w`` relaxation.

    ``hidden=False`` drops the ``w`` feedback and rows (bare truncation).
    """
    p = _lorenz96_params(regime, params)
    I, J, f, h = int(p["I"]), int(p["J"]), p["f"], p["h"]
    lib = lorenz96_library(I, stencil_radius, hidden)
    lay = lib.layout
    c = lorenz96_c(I)
    spec = {}
    for i, r in enumerate(lay.group("u")):
        rf = lambda s: _ring_factors(lay, r, s)  # noqa: E731
        spec[r] = [
            (rf([("u", -2, 1), ("u", -1, 1)]), -1.0), (rf([("u", -1, 1), ("u", 1, 1)]), 1.0),
            (rf([("u", 1, 2)]), 1.0), (rf([("u", -1, 1), ("u", 0, 1)]), -1.0),
            (rf([("u", 0, 1), ("u", 1, 1)]), 1.0), (rf([("u", -1, 2)]), -1.0),
            (rf([("u", 0, 1)]), -1.0), ((), f),
        ]
        if hidden:
            spec[r].append((rf([("w", 0, 1)]), -h * c[i] / J))
    if not hidden:
        return _model_from_spec(lib, spec, np.full(I, p["sigma_u"]))
    for i, r in enumerate(lay.group("w")):
        spec[r] = [(_ring_factors(lay, r, [("u", 0, 1)]), h * c[i]), (_ring_factors(lay, r, [("w", 0, 1)]), -1.0)]
    noise = np.r_[np.full(I, p["sigma_u"]), np.full(I, lorenz96_hidden_noise(regime, **params))]
    return _model_from_spec(lib, spec, noise)


def lorenz96_aggregation(I: int = 20, J: int = 4) -> dict[str, list[str]]:
    """Mapping ``w_i -> [v_{i,1}, ..., v_{i,J}]`` between the full and reduced layouts."""
    return {f"w{i + 1}": [f"v{i + 1}_{j + 1}" for j in range(J)] for i in range(I)}


# ---------------------------------------------------------------------------
# FitzHugh-Nagumo lattice

def fhn_layout(N: int = 40) -> StateLayout:
    return StateLayout.ring(N, {"u": True, "v": False})


def fhn_library(N: int = 40, stencil_radius: int = 2) -> TermLibrary:
    """28 candidates per ``u_i`` and 4 per ``v_i``."""
    lay = fhn_layout(N)
    rows = []
    for row in lay.group("u"):
        terms = local_terms(lay, row, "u", stencil_radius, cubic=True)
        terms += [ring_term(lay, row, []), ring_term(lay, row, [("v", 0, 1)]),
                  ring_term(lay, row, [("u", 0, 1), ("v", 0, 1)])]
        rows.append(tuple(terms))
    for row in lay.group("v"):
        rows.append((ring_term(lay, row, [("u", 0, 1)]), ring_term(lay, row, [("u", 0, 2)]),
                     ring_term(lay, row, []), ring_term(lay, row, [("v", 0, 1)])))
    rows = tuple(rows)
    seeds = []
    if stencil_radius >= 1:
        seeds += [(("u", [("u", 1, 2)]), ("u", 1, [("u", -1, 1), ("u", 0, 1)])),
                  (("u", [("u", 0, 1), ("u", 1, 1)]), ("u", 1, [("u", -1, 2)]))]
    if stencil_radius >= 2:
        seeds.append((("u", [("u", 0, 1), ("u", 2, 1)]), ("u", 2, [("u", -2, 2)])))
    seeds.append((("u", [("u", 0, 1), ("v", 0, 1)]), ("v", 0, [("u", 0, 2)])))
    return TermLibrary(lay, rows, stencil_radius, ring_energy_pairs(lay, rows, seeds))


def _fhn_params(params: dict) -> dict:
    p = {**FHN, **params}
    _require(p, FHN, "fhn")
    return p


def _fhn_model(p: dict, u_spec, v_spec, noise_v: float, stencil_radius: int = 2) -> CoefficientModel:
    N, eps = int(p["N"]), p["eps"]
    lib = fhn_library(N, stencil_radius)
    lay = lib.layout
    spec = {}
    for r in lay.group("u"):
        spec[r] = [(_ring_factors(lay, r, s), val / eps) for s, val in u_spec]
    for r in lay.group("v"):
        spec[r] = [(_ring_factors(lay, r, s), val) for s, val in v_spec]
    noise = np.r_[np.full(N, p["delta1"] / math.sqrt(eps)), np.full(N, noise_v)]
    return _model_from_spec(lib, spec, noise)


def _fhn_diffusive(d: float):
    return [([("u", 0, 1)], 1.0 - 2.0 * d), ([("u", -1, 1)], d), ([("u", 1, 1)], d),
            ([("u", 0, 3)], -1.0 / 3.0), ([("v", 0, 1)], -1.0)]


def fhn_truth(**params) -> CoefficientModel:
    p = _fhn_params(params)
    return _fhn_model(p, _fhn_diffusive(p["d_u"]), [([("u", 0, 1)], 1.0), ([], p["a"])], p["delta2"])


def fhn_initial_guess(variant: int = 1, **params) -> CoefficientModel:
    """Starting models of the two FHN experiments.

    ``variant=1``: true structure with ``d_u = 0.5`` and hidden noise 0.4.
    ``variant=2``: ``d_u = 0.5`` plus three energy-conserving advection pairs,
    the ``u_i v_i`` / ``u_i^2`` cross pair, hidden noise 0.1.
    """
    p = _fhn_params(params)
    eps = p["eps"]
    if variant == 1:
        return _fhn_model(p, _fhn_diffusive(0.5), [([("u", 0, 1)], 1.0), ([], p["a"])], 0.4)
    if variant == 2:
        u_spec = [([("u", -1, 1)], 0.5), ([("u", 1, 1)], 0.5), ([("u", 0, 3)], -1.0 / 3.0), ([("v", 0, 1)], -1.0),
                  ([("u", 1, 2)], 1.0), ([("u", -1, 1), ("u", 0, 1)], -1.0),
                  ([("u", 0, 1), ("u", 1, 1)], 1.0), ([("u", -1, 2)], -1.0),
                  ([("u", 0, 1), ("u", 2, 1)], 1.0), ([("u", -2, 2)], -1.0),
                  ([("u", 0, 1), ("v", 0, 1)], eps)]
        v_spec = [([("u", 0, 1)], 1.0), ([("u", 0, 2)], -1.0), ([], p["a"])]
        return _fhn_model(p, u_spec, v_spec, 0.1)
    raise ConfigurationError(f"fhn: unknown initial-guess variant {variant!r}")


# ---------------------------------------------------------------------------
# name-based access

def catalog_model(name: str, **params) -> CoefficientModel:
    """True model of a benchmark system."""
    if name == "lorenz84":
        return lorenz84_truth(**params)
    if name == "lorenz96-two-layer":
        regime = params.pop("regime", None)
        if regime is None:
            raise ConfigurationError("lorenz96-two-layer: regime (I or II) is required")
        return lorenz96_truth(str(regime), **params)
    if name == "fhn-lattice":
        return fhn_truth(**params)
    raise ConfigurationError(f"unknown catalog model {name!r}; expected one of {NAMES}")


def catalog_library(name: str, stencil_radius: int | None = None, **params) -> TermLibrary:
    """Candidate library used when learning the named system."""
    if name == "lorenz84":
        return lorenz84_library()
    s = 2 if stencil_radius is None else int(stencil_radius)
    if name == "lorenz96-two-layer":
        return lorenz96_library(int(params.get("I", LORENZ96["I"])), s, params.get("hidden", True))
    if name == "fhn-lattice":
        return fhn_library(int(params.get("N", FHN["N"])), s)
    raise ConfigurationError(f"unknown catalog library {name!r}; expected one of {NAMES}")
