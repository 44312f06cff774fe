"""The iterative learning loop and post-hoc evaluation of identified models.

Each iteration
  1. samples a hidden path from the smoothing distribution of the current model,
  2. selects terms by thresholding causation entropies on observed + sampled data,
  3. re-estimates the retained coefficients by constrained maximum likelihood.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .causality import build_causation_matrix, frobenius_distance
from .cgns import ConditionalGaussian
from .dynamics.model import CoefficientModel, TermLibrary, TrajectorySet
from .dynamics.simulate import simulate
from .errors import (BlowUpError, CGLearnError, ConfigurationError, LearningAborted, StructuralError)
from .estimation import estimate
from . import stats


@dataclass(frozen=True)
class LearnConfig:
    """Knobs of the learning loop.

    ``threshold`` may be a scalar, one value per row, or a mapping keyed by row
    or group name (with ``"default"``). ``hidden_noise`` of ``None`` keeps the
    hidden-row amplitudes of the initial model. Per-iteration seeds come from
    ``seeds`` when given, otherwise they are spawned from ``seed``.
    """

    max_iterations: int = 120
    threshold: object = 1e-3
    structure_patience: int = 3
    param_tol: float = 1e-3
    hidden_noise: Sequence[float] | None = None
    filter_init: tuple = (0.0, 1.0)
    seed: int = 0
    seeds: Sequence[int] | None = None
    burn_in_fraction: float = 0.01
    constrained: bool = True
    max_samples: int = 200_000
    param_window: int = 1
    observed_noise: str = "initial"
    freeze_structure: bool = True

    def __post_init__(self):
        if int(self.max_iterations) < 1:
            raise ConfigurationError("max_iterations must be >= 1")
        if not self.param_tol > 0:
            raise ConfigurationError("param_tol must be positive")
        if int(self.structure_patience) < 0:
            raise ConfigurationError("structure_patience must be nonnegative")
        if int(self.param_window) < 1:
            raise ConfigurationError("param_window must be >= 1")
        if not 0 <= self.burn_in_fraction < 1:
            raise ConfigurationError("burn_in_fraction must lie in [0, 1)")
        th = self.threshold
        vals = th.values() if isinstance(th, Mapping) else np.atleast_1d(th)
        if any(not float(v) > 0 for v in vals):
            raise ConfigurationError("threshold must be positive")
        if self.observed_noise not in ("quadratic-variation", "initial"):
            raise ConfigurationError("observed_noise must be 'quadratic-variation' or 'initial'")
        if self.seeds is not None and len(self.seeds) < self.max_iterations:
            raise ConfigurationError("explicit seeds must cover max_iterations")

    def iteration_seeds(self) -> list[int]:
        if self.seeds is not None:
            return [int(s) for s in self.seeds]
        children = np.random.SeedSequence(int(self.seed)).spawn(int(self.max_iterations))
        return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


@dataclass
class IterationRecord:
    iteration: int
    frobenius: float
    log_likelihood: float
    max_param_delta: float
    n_retained: int
    checksum: str
    parameters: np.ndarray
    indicator: tuple


@dataclass
class LearnTrace:
    library: TermLibrary
    records: list = field(default_factory=list)
    converged: bool = False
    stop_reason: str = ""
    frozen_at: int | None = None
    causation: object = None  # causation matrix of the last completed iteration

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def write_csv(self, path) -> Path:
        """Per-iteration summary plus every coefficient (``row:term``) as ``%.17g``."""
        lib = self.library
        labels = [f"{lib.layout.names[n]}:{t.label}" for n, row in enumerate(lib.rows) for t in row]
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "frobenius", "log_likelihood", "max_param_delta", "n_retained", "checksum"]
                       + labels)
            for r in self.records:
                w.writerow([r.iteration, "%.17g" % r.frobenius, "%.17g" % r.log_likelihood,
                            "%.17g" % r.max_param_delta, r.n_retained, r.checksum]
                           + ["%.17g" % v for v in r.parameters])
        return path


def _checksum(traj: TrajectorySet | None) -> str:
    if traj is None:
        return "none"
    return hashlib.sha256(np.ascontiguousarray(traj.values).tobytes()).hexdigest()[:16]


def _same(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def _relative_delta(new: np.ndarray, old: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(new))) if new.size else 0.0, 1e-300)
    return float(np.max(np.abs(new - old))) / scale if new.size else 0.0


def observed_noise(obs: TrajectorySet, indices: Sequence[int], start: int = 0) -> np.ndarray:
    """Amplitudes ``sqrt(sum (dz)^2 / (J dt))`` of the given columns."""
    out = []
    for i in indices:
        z = obs.column(i)[start:]
        dz = np.diff(z)
        out.append(math.sqrt(float(dz @ dz) / (dz.size * obs.dt)))
    return np.array(out)


def learn(observed: TrajectorySet, library: TermLibrary, initial_model: CoefficientModel,
          config: LearnConfig = LearnConfig(), reference=None, callback=None):
    """Run the three-step loop; returns ``(model, trace)``.

    ``reference`` is an optional indicator (e.g. the true structure) used only
    for the Frobenius column of the trace. Once the indicator has stayed the
    same over ``structure_patience`` further iterations it is frozen (unless
    ``freeze_structure`` is off) and later iterations only re-estimate
    parameters. The loop stops when the structure is settled and the largest
    relative parameter change (between means of the last two windows of
    ``param_window`` iterations) is below ``param_tol``. The first sampling
    pass uses the observed-row noise of the initial model; with
    ``observed_noise="quadratic-variation"`` it uses the quadratic variation of
    the data instead. With no hidden
    variables the loop stops as soon as an iteration reproduces its
    predecessor. Numerical failures raise :class:`LearningAborted` carrying the
    partial trace.
    """
    lay = library.layout
    if initial_model.library.shape() != library.shape() or initial_model.layout.names != lay.names:
        raise StructuralError("initial model must be defined on the learning library")
    missing = [lay.names[i] for i in lay.observed_indices if lay.names[i] not in observed.names]
    if missing:
        raise StructuralError(f"observed data lacks variables {missing}")
    obs = observed.select([lay.names[i] for i in lay.observed_indices])
    if obs.layout.names != lay.names:
        obs = obs.relabel(lay)
    hidden = lay.hidden_indices
    hn = np.array(initial_model.noise, dtype=float)
    if config.hidden_noise is not None:
        hv = np.broadcast_to(np.asarray(config.hidden_noise, dtype=float), (len(hidden),))
        hn[list(hidden)] = hv
    start = int(math.floor(config.burn_in_fraction * obs.n_samples))
    if config.observed_noise == "quadratic-variation":
        # data-only quantity: the first sampling pass already uses it
        hn[list(lay.observed_indices)] = observed_noise(obs, lay.observed_indices, start)
    model = initial_model.with_parameters(noise=hn)
    seeds = config.iteration_seeds()
    trace = LearnTrace(library)
    history: list[np.ndarray] = []
    indicators: list = []
    frozen = None
    prev = model.flat()
    for it in range(int(config.max_iterations)):
        try:
            if hidden:
                cg = ConditionalGaussian(model, obs, config.filter_init)
                sampled = cg.sample(seeds[it])
                del cg
                data = obs.combine(sampled)
            else:
                sampled, data = None, obs
            if frozen is None:
                cm = build_causation_matrix(data, library, config.threshold, config.burn_in_fraction,
                                            config.max_samples)
                ind = cm.indicator
            else:
                ind = frozen
            res = estimate(data, library, ind, hidden_noise=hn if hidden else None,
                           constrained=config.constrained, start=start)
        except CGLearnError as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise LearningAborted(it + 1, exc, trace) from exc
        new = res.to_model(library)
        if hidden:
            new = new.with_parameters(noise=np.where(lay.observed_mask, new.noise, hn))
        flat = new.flat()
        history.append(flat)
        indicators.append(ind)
        delta = _relative_delta(flat, prev)
        fro = frobenius_distance(ind, reference) if reference is not None else float("nan")
        rec = IterationRecord(it + 1, fro, -res.objective, delta, int(sum(int(np.sum(i)) for i in ind)),
                              _checksum(sampled), flat, tuple(np.array(i) for i in ind))
        trace.records.append(rec)
        trace.causation = cm
        if callback is not None:
            callback(rec)
        model, prev = new, flat
        if not hidden:
            if len(history) >= 2 and _same(indicators[-1], indicators[-2]) and np.array_equal(history[-1], history[-2]):
                trace.converged, trace.stop_reason = True, "fixed point"
                break
            continue
        p, w = int(config.structure_patience), int(config.param_window)
        settled = len(indicators) >= p + 1 and all(_same(indicators[-1], indicators[-k]) for k in range(2, p + 2))
        if settled and frozen is None and config.freeze_structure:
            frozen, trace.frozen_at = ind, it + 1
        if settled and len(history) >= 2 * w:
            a = np.mean(history[-w:], axis=0)
            b = np.mean(history[-2 * w:-w], axis=0)
            if _relative_delta(a, b) < config.param_tol:
                trace.converged, trace.stop_reason = True, "converged"
                break
    if not trace.stop_reason:
        trace.stop_reason = "max_iterations"
    return model, trace


# ---------------------------------------------------------------------------

def _simulate_or_report(model, initial, horizon, dt, seed, burn_in, substeps):
    try:
        return simulate(model, initial, horizon, dt, seed, burn_in=burn_in, substeps=substeps), None
    except BlowUpError as exc:
        return None, exc.step


def evaluate_identified(model: CoefficientModel, truth: CoefficientModel, sim_horizon: float, seed,
                        dt: float = 1e-3, variables: Sequence[str] | None = None,
                        truth_transform=None, initial=None, truth_initial=None, burn_in: float = 10.0,
                        bins: int = stats.DEFAULT_BINS, max_lag: float = stats.DEFAULT_MAX_LAG,
                        substeps: int = 1, truth_substeps: int = 1, truth_data: TrajectorySet | None = None,
                        return_data: bool = False):
    """Simulate both models and compare marginal PDFs, ACFs and coefficients.

    ``truth_transform`` maps the truth trajectory onto the compared variables
    (e.g. layer aggregation); ``truth_data`` skips the truth simulation. Blow-up
    of either model is reported, not raised. With ``return_data`` the result is
    ``(report, model_trajectory, truth_view)`` (trajectories may be ``None``).
    """
    rng = np.random.default_rng(seed)
    s_init, s_model, s_truth = (int(x) for x in rng.integers(0, 2**63 - 1, size=3))
    if initial is None:
        initial = 0.1 * np.random.default_rng(s_init).standard_normal(model.layout.n)
    if truth_data is None:
        if truth_initial is None:
            truth_initial = 0.1 * np.random.default_rng(s_init).standard_normal(truth.layout.n)
        truth_data, tblow = _simulate_or_report(truth, truth_initial, sim_horizon, dt, s_truth, burn_in, truth_substeps)
    else:
        tblow = None
    same = model is truth or (model.layout.names == truth.layout.names and truth_transform is None
                              and np.array_equal(model.flat(), truth.flat())
                              and np.array_equal(model.noise, truth.noise))
    if same and truth_data is not None and tblow is None and model.layout.n == truth.layout.n:
        mdata, mblow = truth_data, None
    else:
        mdata, mblow = _simulate_or_report(model, initial, sim_horizon, dt, s_model, burn_in, substeps)
    report: dict = {"horizon": sim_horizon, "dt": dt, "blowup": {"model": mblow, "truth": tblow}}
    tview = None
    if truth_data is not None:
        tview = truth_transform(truth_data) if truth_transform is not None else truth_data
    if mdata is not None and tview is not None:
        names = list(variables) if variables is not None else [n for n in mdata.names if n in set(tview.names)]
        lags = stats.lag_steps(max_lag, dt)
        per = {}
        for nm in names:
            a, b = mdata.column(nm), tview.column(nm)
            entry = {"pdf_l1": stats.pdf_distance(a, b, bins)}
            try:
                entry["acf_l2"] = stats.acf_distance(a, b, min(lags, a.size - 1))
            except CGLearnError:
                entry["acf_l2"] = float("inf")
            per[nm] = entry
        report["variables"] = per
        report["mean_pdf_l1"] = float(np.mean([v["pdf_l1"] for v in per.values()])) if per else 0.0
        report["mean_acf_l2"] = float(np.mean([v["acf_l2"] for v in per.values()])) if per else 0.0
    report["parameters"] = parameter_table(model, truth)
    if return_data:
        return report, mdata, tview
    return report


def parameter_table(model: CoefficientModel, truth: CoefficientModel) -> list[dict] | None:
    """Aligned coefficients by (row, term label) when both models share row names and a structure."""
    if model.layout.names != truth.layout.names:
        return None
    ma, ta = model.indicator(), truth.indicator()
    rows = []
    for n, name in enumerate(model.layout.names):
        la, lt = model.library.labels(n), truth.library.labels(n)
        ka = {l for l, keep in zip(la, ma[n]) if keep}
        kt = {l for l, keep in zip(lt, ta[n]) if keep}
        if ka != kt:
            return None
        for lab in lt:
            if lab in kt:
                rows.append({"row": name, "term": lab, "truth": truth.coefficient(name, lab),
                             "identified": model.coefficient(name, lab)})
    return rows
