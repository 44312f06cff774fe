"""State layouts, candidate terms, term libraries, coefficient models and trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..errors import ConfigurationError, StructuralError

ROLES = ("observed-data", "sampled-hidden", "simulated")
TOPOLOGIES = ("dense", "ring", "two-layer-ring")


@dataclass(frozen=True)
class Topology:
    kind: str = "dense"
    sites: int = 0
    per_site: int = 0

    def __post_init__(self):
        if self.kind not in TOPOLOGIES:
            raise ConfigurationError(f"unknown topology {self.kind!r}")
        if self.kind != "dense" and self.sites < 1:
            raise ConfigurationError("ring topologies need at least one site")
        if self.kind == "two-layer-ring" and self.per_site < 1:
            raise ConfigurationError("two-layer ring needs per_site >= 1")


@dataclass(frozen=True)
class StateLayout:
    """Ordered state variables, which of them are observed, and their periodic grouping.

    ``groups`` lists, for ring topologies, each variable family in ring order so
    that ``resolve(group, position, offset)`` can apply periodic wraparound.
    """

    names: tuple[str, ...]
    observed_mask: tuple[bool, ...]
    topology: Topology = Topology()
    groups: tuple[tuple[str, tuple[int, ...]], ...] = ()
    _index: dict = field(default=None, init=False, repr=False, compare=False, hash=False)
    _site: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        mask = tuple(bool(m) for m in self.observed_mask)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "observed_mask", mask)
        if len(set(names)) != len(names):
            raise StructuralError("state names must be unique")
        if len(mask) != len(names):
            raise StructuralError("observed_mask length must equal number of names")
        groups = tuple((str(g), tuple(int(i) for i in idx)) for g, idx in self.groups)
        object.__setattr__(self, "groups", groups)
        site = {}
        for g, idx in groups:
            for pos, i in enumerate(idx):
                if not 0 <= i < len(names):
                    raise StructuralError(f"group {g!r} references variable {i} out of range")
                if i in site:
                    raise StructuralError(f"variable {names[i]!r} belongs to two groups")
                site[i] = (g, pos)
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})
        object.__setattr__(self, "_site", site)

    @classmethod
    def dense(cls, names: Sequence[str], observed: Sequence[bool]) -> "StateLayout":
        return cls(tuple(names), tuple(observed))

    @classmethod
    def ring(cls, sites: int, groups: Mapping[str, bool]) -> "StateLayout":
        """One ring of ``sites`` variables per group; names are ``<group><site>`` (1-based)."""
        names, mask, grp = [], [], []
        for g, obs in groups.items():
            start = len(names)
            names += [f"{g}{i + 1}" for i in range(sites)]
            mask += [bool(obs)] * sites
            grp.append((g, tuple(range(start, start + sites))))
        return cls(tuple(names), tuple(mask), Topology("ring", sites), tuple(grp))

    @classmethod
    def two_layer_ring(cls, sites: int, per_site: int, outer: str = "u", inner: str = "v",
                       inner_observed: bool = False) -> "StateLayout":
        """Outer ring ``u_i`` plus an inner ring of ``sites * per_site`` variables ``v_{i,j}``.

        The inner ring runs j-fastest, so ``v_{i,j+J}`` is ``v_{i+1,j}``.
        """
        names = [f"{outer}{i + 1}" for i in range(sites)]
        names += [f"{inner}{i + 1}_{j + 1}" for i in range(sites) for j in range(per_site)]
        mask = [True] * sites + [bool(inner_observed)] * (sites * per_site)
        grp = ((outer, tuple(range(sites))), (inner, tuple(range(sites, sites + sites * per_site))))
        return cls(tuple(names), tuple(mask), Topology("two-layer-ring", sites, per_site), grp)

    @property
    def n(self) -> int:
        return len(self.names)

    @property
    def observed_indices(self) -> tuple[int, ...]:
        return tuple(i for i, m in enumerate(self.observed_mask) if m)

    @property
    def hidden_indices(self) -> tuple[int, ...]:
        return tuple(i for i, m in enumerate(self.observed_mask) if not m)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise StructuralError(f"unknown state variable {name!r}") from None

    def group(self, name: str) -> tuple[int, ...]:
        for g, idx in self.groups:
            if g == name:
                return idx
        raise StructuralError(f"unknown variable group {name!r}")

    def site_of(self, var: int) -> tuple[str, int] | None:
        return self._site.get(var)

    def resolve(self, group: str, position: int, offset: int = 0) -> int:
        """Variable index of ``group[position + offset]`` with periodic wraparound."""
        idx = self.group(group)
        return idx[(position + offset) % len(idx)]

    def with_observed(self, observed: Sequence[bool]) -> "StateLayout":
        return StateLayout(self.names, tuple(observed), self.topology, self.groups)

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "observed": list(self.observed_mask),
            "topology": {"kind": self.topology.kind, "sites": self.topology.sites,
                         "per_site": self.topology.per_site},
            "groups": {g: [self.names[i] for i in idx] for g, idx in self.groups},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "StateLayout":
        names = tuple(d["names"])
        index = {n: i for i, n in enumerate(names)}
        topo = Topology(**d.get("topology", {}))
        groups = tuple((g, tuple(index[n] for n in members)) for g, members in d.get("groups", {}).items())
        return cls(names, tuple(d["observed"]), topo, groups)


@dataclass(frozen=True)
class Term:
    """Monomial candidate ``prod z_k ** e_k`` in the equation of state variable ``target``.

    ``factors`` is canonical: sorted by variable index, exponents positive.
    """

    target: int
    factors: tuple[tuple[int, int], ...]
    label: str

    @property
    def is_constant(self) -> bool:
        return not self.factors

    @property
    def degree(self) -> int:
        return sum(e for _, e in self.factors)


def canonical_factors(factors: Iterable[tuple[int, int]]) -> tuple[tuple[int, int], ...]:
    acc: dict[int, int] = {}
    for var, exp in factors:
        if exp < 0:
            raise StructuralError("term exponents must be nonnegative")
        if exp:
            acc[int(var)] = acc.get(int(var), 0) + int(exp)
    return tuple(sorted(acc.items()))


def monomial_label(names: Sequence[str], factors: Sequence[tuple[int, int]]) -> str:
    if not factors:
        return "1"
    return "*".join(names[v] if e == 1 else f"{names[v]}^{e}" for v, e in factors)


def make_term(layout: StateLayout, target: int, factors: Iterable[tuple[int, int]],
              label: str | None = None) -> Term:
    f = canonical_factors(factors)
    for v, _ in f:
        if not 0 <= v < layout.n:
            raise StructuralError(f"term references variable {v} out of range")
    return Term(int(target), f, label if label is not None else monomial_label(layout.names, f))


def _offset_name(group: str, offset: int) -> str:
    if offset == 0:
        return f"{group}_i"
    return f"{group}_{{i{offset:+d}}}"


def ring_term(layout: StateLayout, target: int, spec: Sequence[tuple[str, int, int]]) -> Term:
    """Term on a ring stencil relative to the site of ``target``.

    ``spec`` holds ``(group, offset, exponent)`` triples; the label uses relative
    offsets (e.g. ``u_{i-1}*u_{i+1}``) sorted by group order then offset.
    """
    site = layout.site_of(target)
    if site is None:
        raise StructuralError(f"{layout.names[target]!r} is not on a ring")
    pos = site[1]
    order = {g: k for k, (g, _) in enumerate(layout.groups)}
    rel: dict[tuple[str, int], int] = {}
    for g, off, e in spec:
        rel[(g, off)] = rel.get((g, off), 0) + e
    parts = []
    for (g, off), e in sorted(rel.items(), key=lambda kv: (order[kv[0][0]], kv[0][1])):
        nm = _offset_name(g, off)
        parts.append(nm if e == 1 else f"{nm}^{e}")
    label = "*".join(parts) if parts else "1"
    factors = [(layout.resolve(g, pos, off), e) for (g, off), e in rel.items()]
    return make_term(layout, target, factors, label)


@dataclass(frozen=True, eq=False)
class TermLibrary:
    """Per-equation candidate terms.

    ``energy_pairs`` lists pairs of ``(row, term_index)`` entries whose
    coefficients must sum to zero for the quadratic nonlinearity to conserve
    energy. With ``conditionally_linear`` the library is checked to be at most
    linear in the hidden variables.
    """

    layout: StateLayout
    rows: tuple[tuple[Term, ...], ...]
    stencil_radius: int = 0
    energy_pairs: tuple[tuple[tuple[int, int], tuple[int, int]], ...] = ()
    conditionally_linear: bool = True

    def __post_init__(self):
        rows = tuple(tuple(r) for r in self.rows)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "energy_pairs",
                           tuple((tuple(map(int, a)), tuple(map(int, b))) for a, b in self.energy_pairs))
        lay = self.layout
        if len(rows) != lay.n:
            raise StructuralError(f"library has {len(rows)} rows for {lay.n} state variables")
        if self.stencil_radius < 0:
            raise ConfigurationError("stencil_radius must be nonnegative")
        hidden = set(lay.hidden_indices)
        for n, row in enumerate(rows):
            seen = set()
            if sum(t.is_constant for t in row) != 1:
                raise StructuralError(f"row {lay.names[n]!r} must contain exactly one constant term")
            for t in row:
                if t.target != n:
                    raise StructuralError(f"term {t.label!r} placed in row {n} targets {t.target}")
                if t.factors in seen:
                    raise StructuralError(f"duplicate term {t.label!r} in row {lay.names[n]!r}")
                seen.add(t.factors)
                for v, _ in t.factors:
                    if not 0 <= v < lay.n:
                        raise StructuralError(f"term {t.label!r} references variable {v} out of range")
                hdeg = sum(e for v, e in t.factors if v in hidden)
                if self.conditionally_linear and hdeg > 1:
                    raise StructuralError(
                        f"term {t.label!r} has hidden degree {hdeg}; conditionally linear libraries allow at most 1")
            if lay.topology.kind == "ring":
                self._check_stencil(n, row)
        for a, b in self.energy_pairs:
            for r, m in (a, b):
                if not (0 <= r < lay.n and 0 <= m < len(rows[r])):
                    raise StructuralError(f"energy pair entry {(r, m)} out of range")

    def _check_stencil(self, n: int, row: Sequence[Term]):
        lay = self.layout
        s = lay.site_of(n)
        if s is None:
            return
        period = lay.topology.sites
        for t in row:
            for v, _ in t.factors:
                sv = lay.site_of(v)
                if sv is None:
                    continue
                d = abs(sv[1] - s[1]) % period
                if min(d, period - d) > self.stencil_radius:
                    raise StructuralError(
                        f"term {t.label!r} in row {lay.names[n]!r} lies outside stencil radius {self.stencil_radius}")

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def constant_index(self, n: int) -> int:
        for m, t in enumerate(self.rows[n]):
            if t.is_constant:
                return m
        raise StructuralError("row without constant term")  # unreachable after validation

    def labels(self, n: int) -> tuple[str, ...]:
        return tuple(t.label for t in self.rows[n])

    def term_index(self, n: int, label: str) -> int:
        for m, t in enumerate(self.rows[n]):
            if t.label == label:
                return m
        raise StructuralError(f"row {self.layout.names[n]!r} has no term {label!r}")

    def hidden_degree(self, term: Term) -> int:
        mask = self.layout.observed_mask
        return sum(e for v, e in term.factors if not mask[v])

    def split(self, term: Term) -> tuple[tuple[tuple[int, int], ...], int | None]:
        """Split a term into its observed monomial and at most one hidden factor."""
        mask = self.layout.observed_mask
        obs = tuple((v, e) for v, e in term.factors if mask[v])
        hid = [(v, e) for v, e in term.factors if not mask[v]]
        if not hid:
            return obs, None
        if len(hid) > 1 or hid[0][1] != 1:
            raise StructuralError(f"term {term.label!r} is not conditionally linear in the hidden state")
        return obs, hid[0][0]

    def shape(self) -> tuple[int, ...]:
        return tuple(len(r) for r in self.rows)

    def full_indicator(self) -> tuple[np.ndarray, ...]:
        return tuple(np.ones(len(r), dtype=bool) for r in self.rows)


def evaluate_monomial(Z: np.ndarray, factors: Sequence[tuple[int, int]], cache: dict | None = None) -> np.ndarray:
    """Evaluate a monomial on a state vector ``(N,)`` or a state matrix ``(T, N)``."""
    if not factors:
        return np.ones(Z.shape[:-1]) if Z.ndim > 1 else np.float64(1.0)
    key = tuple(factors)
    if cache is not None and key in cache:
        return cache[key]
    out = None
    for v, e in factors:
        col = Z[..., v]
        p = col if e == 1 else col ** e
        out = p if out is None else out * p
    if cache is not None:
        cache[key] = out
    return out


def evaluate_terms(library: TermLibrary, state, row: int) -> np.ndarray:
    """Values of every candidate term of ``row`` at one state vector."""
    z = np.asarray(state, dtype=float)
    if z.shape != (library.layout.n,):
        raise StructuralError(f"state must have length {library.layout.n}")
    if not 0 <= row < library.n_rows:
        raise StructuralError(f"row {row} out of range")
    return np.array([float(evaluate_monomial(z, t.factors)) for t in library.rows[row]])


def term_matrix(library: TermLibrary, Z: np.ndarray, row: int, terms: Sequence[int] | None = None,
                cache: dict | None = None) -> np.ndarray:
    """Matrix ``(T, M)`` of term values of ``row`` over a state matrix ``Z (T, N)``."""
    idx = range(len(library.rows[row])) if terms is None else terms
    T = Z.shape[0]
    out = np.empty((T, len(idx)))
    for k, m in enumerate(idx):
        out[:, k] = evaluate_monomial(Z, library.rows[row][m].factors, cache)
    return out


@dataclass(frozen=True, eq=False)
class CGForm:
    """Conditional-Gaussian coefficients evaluated along an observed path.

    Dense arrays are ``(T, N1)`` / ``(T, N2)``; the state-dependent coupling
    matrices are kept sparse as ``{(i, k): series}`` keyed by positions within
    ``obs`` and ``hid``.
    """

    obs: tuple[int, ...]
    hid: tuple[int, ...]
    A0: np.ndarray
    A1: dict
    a0: np.ndarray
    a1: dict
    B1: np.ndarray
    b2: np.ndarray


@dataclass(frozen=True, eq=False)
class CoefficientModel:
    """Sparse coefficients over a term library plus diagonal noise amplitudes."""

    library: TermLibrary
    xi: tuple[np.ndarray, ...]
    noise: np.ndarray

    def __post_init__(self):
        lib = self.library
        if len(self.xi) != lib.n_rows:
            raise StructuralError("xi must have one row per state variable")
        xi = []
        for n, (row, c) in enumerate(zip(lib.rows, self.xi)):
            a = np.array(c, dtype=float).reshape(-1)
            if a.shape != (len(row),):
                raise StructuralError(f"row {lib.layout.names[n]!r}: expected {len(row)} coefficients")
            if not np.all(np.isfinite(a)):
                raise StructuralError("coefficients must be finite")
            a.setflags(write=False)
            xi.append(a)
        noise = np.array(self.noise, dtype=float).reshape(-1)
        if noise.shape != (lib.layout.n,):
            raise StructuralError("noise must have one amplitude per state variable")
        if np.any(~np.isfinite(noise)) or np.any(noise < 0):
            raise StructuralError("noise amplitudes must be finite and nonnegative")
        noise.setflags(write=False)
        object.__setattr__(self, "xi", tuple(xi))
        object.__setattr__(self, "noise", noise)

    @property
    def layout(self) -> StateLayout:
        return self.library.layout

    @classmethod
    def zeros(cls, library: TermLibrary, noise) -> "CoefficientModel":
        noise = np.broadcast_to(np.asarray(noise, dtype=float), (library.layout.n,))
        return cls(library, tuple(np.zeros(len(r)) for r in library.rows), noise)

    @classmethod
    def from_terms(cls, library: TermLibrary, coefficients: Mapping[tuple[str, str], float], noise):
        """Build from ``{(row name, term label): value}``; unspecified terms are zero."""
        xi = [np.zeros(len(r)) for r in library.rows]
        for (row_name, label), val in coefficients.items():
            n = library.layout.index(row_name)
            xi[n][library.term_index(n, label)] = val
        noise = np.broadcast_to(np.asarray(noise, dtype=float), (library.layout.n,))
        return cls(library, tuple(xi), noise)

    def with_parameters(self, xi=None, noise=None) -> "CoefficientModel":
        return CoefficientModel(self.library, self.xi if xi is None else tuple(xi),
                                self.noise if noise is None else noise)

    def coefficient(self, row: str, label: str) -> float:
        n = self.layout.index(row)
        return float(self.xi[n][self.library.term_index(n, label)])

    def indicator(self) -> tuple[np.ndarray, ...]:
        """Nonzero pattern, with constant terms always marked retained."""
        out = []
        for n, c in enumerate(self.xi):
            ind = c != 0
            ind[self.library.constant_index(n)] = True
            out.append(ind)
        return tuple(out)

    def flat(self) -> np.ndarray:
        return np.concatenate(self.xi) if self.xi else np.zeros(0)

    def drift(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        single = Z.ndim == 1
        Z2 = Z[None, :] if single else Z
        out = np.zeros_like(Z2)
        cache: dict = {}
        for n, (row, c) in enumerate(zip(self.library.rows, self.xi)):
            for t, v in zip(row, c):
                if v != 0.0:
                    out[:, n] += v * evaluate_monomial(Z2, t.factors, cache)
        return out[0] if single else out

    def cg_form(self, Z: np.ndarray) -> CGForm:
        """Cast to ``dX = (A0 + A1 Y)dt + B1 dW1``, ``dY = (a0 + a1 Y)dt + b2 dW2`` along ``Z``.

        Only observed columns of ``Z (T, N)`` are read.
        """
        lib = self.library
        lay = lib.layout
        obs, hid = lay.observed_indices, lay.hidden_indices
        pos_o = {v: i for i, v in enumerate(obs)}
        pos_h = {v: k for k, v in enumerate(hid)}
        T = Z.shape[0]
        A0 = np.zeros((T, len(obs)))
        a0 = np.zeros((T, len(hid)))
        A1: dict = {}
        a1: dict = {}
        cache: dict = {}
        for n, (row, c) in enumerate(zip(lib.rows, self.xi)):
            is_obs = lay.observed_mask[n]
            p = pos_o[n] if is_obs else pos_h[n]
            for t, v in zip(row, c):
                if v == 0.0:
                    continue
                mono, h = lib.split(t)
                val = v * evaluate_monomial(Z, mono, cache)
                if h is None:
                    (A0 if is_obs else a0)[:, p] += val
                else:
                    store = A1 if is_obs else a1
                    key = (p, pos_h[h])
                    if key in store:
                        store[key] = store[key] + val
                    else:
                        store[key] = np.broadcast_to(val, (T,)).copy()
        noise = self.noise
        return CGForm(obs, hid, A0, A1, a0, a1, noise[list(obs)].copy(), noise[list(hid)].copy())


def n_samples(horizon: float, dt: float) -> int:
    """Number of stored samples ``floor(T / dt)`` (tolerant to binary rounding)."""
    if not (dt > 0 and math.isfinite(dt)):
        raise ConfigurationError("dt must be positive and finite")
    if not (horizon > 0 and math.isfinite(horizon)):
        raise ConfigurationError("horizon must be positive and finite")
    return int(math.floor(horizon / dt + 1e-9))


@dataclass(frozen=True, eq=False)
class TrajectorySet:
    """Uniformly sampled multivariate series over (a subset of) a layout's variables."""

    layout: StateLayout
    dt: float
    values: np.ndarray
    columns: tuple[int, ...] = None
    roles: tuple[str, ...] = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise StructuralError("trajectory values must be a 2-D array")
        cols = tuple(range(self.layout.n)) if self.columns is None else tuple(int(c) for c in self.columns)
        if vals.shape[1] != len(cols):
            raise StructuralError("values must have one column per declared variable")
        if len(set(cols)) != len(cols) or any(not 0 <= c < self.layout.n for c in cols):
            raise StructuralError("invalid trajectory columns")
        roles = ("simulated",) * len(cols) if self.roles is None else tuple(self.roles)
        if len(roles) != len(cols) or any(r not in ROLES for r in roles):
            raise StructuralError(f"roles must be one of {ROLES} per column")
        if vals.shape[0] < 2:
            raise StructuralError("a trajectory needs at least two samples")
        if not self.dt > 0:
            raise StructuralError("dt must be positive")
        if not np.all(np.isfinite(vals)):
            raise StructuralError("trajectory contains non-finite values")
        vals = vals.view()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "roles", roles)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.layout.names[c] for c in self.columns)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.dt

    def has(self, var: int | str) -> bool:
        v = self.layout.index(var) if isinstance(var, str) else var
        return v in self.columns

    def column(self, var: int | str) -> np.ndarray:
        v = self.layout.index(var) if isinstance(var, str) else var
        try:
            return self.values[:, self.columns.index(v)]
        except ValueError:
            raise StructuralError(f"trajectory has no column {self.layout.names[v]!r}") from None

    def matrix(self, required: Iterable[int] | None = None) -> np.ndarray:
        """Full ``(T, N)`` state matrix; columns not present are zero.

        Raises if any variable in ``required`` (default: all) is missing.
        """
        req = range(self.layout.n) if required is None else required
        missing = [self.layout.names[v] for v in req if v not in self.columns]
        if missing:
            raise StructuralError(f"trajectory lacks variables {missing}")
        if self.columns == tuple(range(self.layout.n)):
            return self.values
        out = np.zeros((self.n_samples, self.layout.n))
        out[:, list(self.columns)] = self.values
        return out

    def select(self, names: Sequence[str]) -> "TrajectorySet":
        idx = [self.layout.index(n) for n in names]
        pos = [self.columns.index(i) for i in idx]
        return TrajectorySet(self.layout, self.dt, self.values[:, pos], tuple(idx),
                             tuple(self.roles[p] for p in pos))

    def observed(self) -> "TrajectorySet":
        return self.select([self.layout.names[i] for i in self.layout.observed_indices])

    def with_role(self, role: str) -> "TrajectorySet":
        return TrajectorySet(self.layout, self.dt, self.values, self.columns, (role,) * len(self.columns))

    def slice(self, start: int = 0, stop: int | None = None, step: int = 1) -> "TrajectorySet":
        return TrajectorySet(self.layout, self.dt * step, self.values[start:stop:step], self.columns, self.roles)

    def combine(self, other: "TrajectorySet") -> "TrajectorySet":
        """Column union with ``other`` (same layout names, step and length; no overlap)."""
        if other.layout.names != self.layout.names:
            other = other.relabel(self.layout)
        if other.n_samples != self.n_samples or abs(other.dt - self.dt) > 1e-12 * self.dt:
            raise StructuralError("trajectories to combine must share the time grid")
        if set(self.columns) & set(other.columns):
            raise StructuralError("trajectories to combine must not share columns")
        return TrajectorySet(self.layout, self.dt, np.hstack([self.values, other.values]),
                             self.columns + other.columns, self.roles + other.roles)

    def relabel(self, layout: StateLayout) -> "TrajectorySet":
        """Re-express on another layout that contains these variable names."""
        cols = tuple(layout.index(n) for n in self.names)
        return TrajectorySet(layout, self.dt, self.values, cols, self.roles)
