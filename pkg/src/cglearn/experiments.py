"""Experiment configurations and the runners behind the command line.

A configuration is one nested mapping (usually a YAML file)::

    experiment: lorenz84            # name used for plot-data folders
    seed: 2024                      # master seed; every other seed is derived
    model: {name: lorenz84, regime: null, params: {}}
    simulation: {horizon: 500, dt: 0.001, burn_in: 10, substeps: 1,
                 initial_std: 0.1, write_truth: full}
    library: {stencil_radius: 2, hidden: true}
    initial_guess: {preset: catalog, variant: 1, sigma_obs: 1.0}   # or {file: model.json}
    learn: {max_iterations: 120, threshold: 0.001, ...}            # LearnConfig fields
    evaluation: {horizon: 500, seed_offset: 0, bins: 100, max_lag: 10,
                 substeps: 1, variables: null}
    data: null                      # optional observed-trajectory CSV

Unknown keys are configuration errors. Built-in presets are available by
name (see :data:`PRESETS`).
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import platform
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from . import __version__, stats
from .causality import write_causation_csv, write_causation_long
from .dynamics import catalog
from .dynamics.io import read_model, read_trajectory, write_model, write_trajectory
from .dynamics.model import CoefficientModel, StateLayout, TermLibrary, TrajectorySet
from .dynamics.simulate import simulate
from .errors import ConfigurationError, StructuralError
from .learning import LearnConfig, evaluate_identified, learn

# ---------------------------------------------------------------------------
# schema

SECTIONS = {
    "experiment": None,
    "seed": None,
    "data": None,
    "output": None,
    "model": {"name", "regime", "params"},
    "simulation": {"horizon", "dt", "burn_in", "substeps", "initial_std", "write_truth"},
    "library": {"stencil_radius", "hidden"},
    "initial_guess": {"preset", "file", "variant", "sigma_obs", "params"},
    "learn": {f.name for f in fields(LearnConfig)} - {"seed", "seeds"},
    "evaluation": {"horizon", "seed_offset", "bins", "max_lag", "substeps", "variables", "burn_in", "enabled"},
}

DEFAULTS = {
    "experiment": "experiment",
    "seed": 0,
    "data": None,
    "output": None,
    "model": {"name": "lorenz84", "regime": None, "params": {}},
    "simulation": {"horizon": 500.0, "dt": 1e-3, "burn_in": 10.0, "substeps": 1, "initial_std": 0.1,
                   "write_truth": "full"},
    "library": {"stencil_radius": 2, "hidden": True},
    "initial_guess": {"preset": "catalog", "file": None, "variant": 1, "sigma_obs": 1.0, "params": {}},
    "learn": {},
    "evaluation": {"horizon": 500.0, "seed_offset": 0, "bins": stats.DEFAULT_BINS, "max_lag": stats.DEFAULT_MAX_LAG,
                   "substeps": 1, "variables": None, "burn_in": 10.0, "enabled": True},
}

WRITE_TRUTH = ("full", "aggregate", "none")


def _l96(regime: str, threshold: float, **learn_extra) -> dict:
    return {
        "experiment": f"lorenz96-{regime}" + ("" if threshold == 1e-3 else f"-r{threshold:g}"),
        "seed": 96,
        "model": {"name": "lorenz96-two-layer", "regime": regime, "params": {}},
        "simulation": {"write_truth": "aggregate"},
        "library": {"stencil_radius": 2, "hidden": True},
        "learn": {"threshold": threshold, "max_iterations": 60, "param_tol": 2e-2, "param_window": 5,
                  **learn_extra},
    }


def _fhn(variant: int) -> dict:
    return {
        "experiment": f"fhn-{variant}",
        "seed": 40 + variant,
        "model": {"name": "fhn-lattice", "regime": None, "params": {}},
        "simulation": {"substeps": 10},
        "library": {"stencil_radius": 2, "hidden": True},
        "initial_guess": {"variant": variant},
        "learn": {"threshold": 1e-3, "max_iterations": 15, "param_tol": 2e-2, "param_window": 3},
        "evaluation": {"substeps": 10},
    }


PRESETS: dict[str, dict] = {
    "lorenz84": {
        "experiment": "lorenz84",
        "seed": 84,
        "model": {"name": "lorenz84", "regime": None, "params": {}},
        "initial_guess": {"sigma_obs": 1.0},
        "learn": {"threshold": 1e-3, "max_iterations": 120, "hidden_noise": [0.1], "param_tol": 1e-2,
                  "param_window": 5},
    },
    "lorenz96-I": _l96("I", 1e-3),
    "lorenz96-I-high": _l96("I", 1e-2),
    "lorenz96-II": _l96("II", 1e-3),
    "lorenz96-II-high": _l96("II", 1e-2),
    "lorenz96-I-btm": {
        "experiment": "lorenz96-I-btm",
        "seed": 96,
        "model": {"name": "lorenz96-two-layer", "regime": "I", "params": {}},
        "simulation": {"write_truth": "aggregate"},
        "library": {"stencil_radius": 2, "hidden": False},
        "learn": {"threshold": 1e-4, "max_iterations": 5},
    },
    "fhn-1": _fhn(1),
    "fhn-2": _fhn(2),
}


def _merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict) and k not in ("params",):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_keys(raw: Mapping):
    if not isinstance(raw, Mapping):
        raise ConfigurationError("configuration must be a mapping")
    for key, val in raw.items():
        if key not in SECTIONS:
            raise ConfigurationError(f"unknown configuration key {key!r}")
        allowed = SECTIONS[key]
        if allowed is None:
            continue
        if val is None:
            continue
        if not isinstance(val, Mapping):
            raise ConfigurationError(f"section {key!r} must be a mapping")
        for sub in val:
            if sub not in allowed:
                raise ConfigurationError(f"unknown configuration key {key}.{sub!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, fully resolved experiment configuration."""

    data: dict
    base_dir: Path = Path(".")

    # -- construction -----------------------------------------------------

    @classmethod
    def from_dict(cls, raw: Mapping, base_dir=".", preset: str | None = None) -> "ExperimentConfig":
        _check_keys(raw)
        base = _merge(DEFAULTS, PRESETS[preset]) if preset else DEFAULTS
        cfg = cls(_merge(base, raw), Path(base_dir))
        cfg.validate()
        return cfg

    def with_overrides(self, seed=None, threshold=None) -> "ExperimentConfig":
        d = copy.deepcopy(self.data)
        if seed is not None:
            d["seed"] = int(seed)
        if threshold is not None:
            d["learn"]["threshold"] = float(threshold)
        cfg = ExperimentConfig(d, self.base_dir)
        cfg.validate()
        return cfg

    def validate(self):
        d = self.data
        if d["model"]["name"] not in catalog.NAMES:
            raise ConfigurationError(f"model.name must be one of {catalog.NAMES}")
        sim = d["simulation"]
        try:
            horizon, dt = float(sim["horizon"]), float(sim["dt"])
        except (TypeError, ValueError):
            raise ConfigurationError("simulation.horizon and simulation.dt must be numbers") from None
        if not (horizon > 0 and math.isfinite(horizon)):
            raise ConfigurationError("simulation.horizon must be positive")
        if not (dt > 0 and dt <= horizon):
            raise ConfigurationError("simulation.dt must be positive and not exceed the horizon")
        if int(sim["substeps"]) < 1 or float(sim["burn_in"]) < 0:
            raise ConfigurationError("simulation.substeps must be >= 1 and burn_in >= 0")
        if sim["write_truth"] not in WRITE_TRUTH:
            raise ConfigurationError(f"simulation.write_truth must be one of {WRITE_TRUTH}")
        if int(d["seed"]) < 0 or int(d["seed"]) >= 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        if d["model"]["name"] == "lorenz96-two-layer" and d["model"]["regime"] not in catalog.LORENZ96_REGIMES:
            raise ConfigurationError("lorenz96-two-layer needs model.regime I or II")
        for key in ("data",):
            if d[key] is not None and not self.resolve(d[key]).exists():
                raise ConfigurationError(f"{key} file {d[key]!r} does not exist")
        ig = d["initial_guess"]
        if ig["file"] is not None and not self.resolve(ig["file"]).exists():
            raise ConfigurationError(f"initial_guess.file {ig['file']!r} does not exist")
        if ig["file"] is None and ig["preset"] != "catalog":
            raise ConfigurationError("initial_guess.preset must be 'catalog' (or give initial_guess.file)")
        if float(d["evaluation"]["horizon"]) <= 0:
            raise ConfigurationError("evaluation.horizon must be positive")
        self.learn_config()

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    # -- accessors ----------------------------------------------------------

    @property
    def name(self) -> str:
        return str(self.data["experiment"])

    @property
    def model_name(self) -> str:
        return self.data["model"]["name"]

    def seeds(self) -> dict[str, int]:
        """Derived seeds: simulation noise, initial state, learning, evaluation."""
        ss = np.random.SeedSequence(int(self.data["seed"]))
        keys = ("simulation", "initial_state", "learn", "evaluation")
        vals = [int(c.generate_state(1, dtype=np.uint64)[0]) for c in ss.spawn(len(keys))]
        out = dict(zip(keys, vals))
        out["evaluation"] += int(self.data["evaluation"]["seed_offset"])
        out["master"] = int(self.data["seed"])
        return out

    def learn_config(self) -> LearnConfig:
        kw = dict(self.data["learn"])
        if "filter_init" in kw:
            kw["filter_init"] = tuple(kw["filter_init"])
        if "enabled" in kw:
            raise ConfigurationError("learn.enabled is not a learning option")
        try:
            return LearnConfig(seed=self.seeds()["learn"], **kw)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def sha256(self) -> str:
        return hashlib.sha256(json.dumps(self.data, sort_keys=True, default=str).encode()).hexdigest()

    # -- models -------------------------------------------------------------

    def _model_params(self) -> dict:
        return dict(self.data["model"]["params"] or {})

    def truth(self) -> CoefficientModel:
        params = self._model_params()
        if self.model_name == "lorenz96-two-layer":
            params["regime"] = self.data["model"]["regime"]
        return catalog.catalog_model(self.model_name, **params)

    def library(self) -> TermLibrary:
        lib = self.data["library"]
        params = self._model_params()
        if self.model_name == "lorenz96-two-layer":
            params = {"I": params.get("I", catalog.LORENZ96["I"]), "hidden": bool(lib["hidden"])}
        elif self.model_name == "fhn-lattice":
            params = {"N": params.get("N", catalog.FHN["N"])}
        return catalog.catalog_library(self.model_name, lib["stencil_radius"], **params)

    def initial_model(self) -> CoefficientModel:
        ig = self.data["initial_guess"]
        if ig["file"] is not None:
            return read_model(self.resolve(ig["file"]))
        extra = dict(ig["params"] or {})
        params = self._model_params()
        r = int(self.data["library"]["stencil_radius"])
        if self.model_name == "lorenz84":
            return catalog.lorenz84_initial_guess(sigma_obs=float(ig["sigma_obs"]), **extra)
        if self.model_name == "lorenz96-two-layer":
            return catalog.lorenz96_initial_guess(self.data["model"]["regime"], r,
                                                  bool(self.data["library"]["hidden"]), **params, **extra)
        return catalog.fhn_initial_guess(int(ig["variant"]), **params, **extra)

    def hidden_noise(self):
        """Configured hidden-row noise, defaulting to the truth-implied value."""
        lc = self.data["learn"]
        if lc.get("hidden_noise") is not None:
            return lc["hidden_noise"]
        return None

    def aggregation(self) -> dict | None:
        if self.model_name != "lorenz96-two-layer":
            return None
        p = {**catalog.LORENZ96, **self._model_params()}
        return catalog.lorenz96_aggregation(int(p["I"]), int(p["J"]))

    def reduced_layout(self) -> StateLayout:
        """Layout of observed plus (aggregated) hidden variables."""
        agg = self.aggregation()
        if agg is not None:
            return catalog.lorenz96_layout(len(agg))
        return self.truth().layout

    def observed_names(self) -> list[str]:
        lay = self.library().layout
        return [lay.names[i] for i in lay.observed_indices]

    def truth_view(self, traj: TrajectorySet, layout: StateLayout) -> TrajectorySet:
        """Express a truth trajectory on a learning layout (aggregating layers where needed)."""
        agg = self.aggregation() or {}
        cols, idx = [], []
        have = set(traj.names)
        for n, name in enumerate(layout.names):
            if name in have:
                cols.append(traj.column(name))
            elif name in agg and all(m in have for m in agg[name]):
                cols.append(sum(traj.column(m) for m in agg[name]))
            else:
                continue
            idx.append(n)
        if not idx:
            raise StructuralError("truth trajectory shares no variables with the layout")
        return TrajectorySet(layout, traj.dt, np.column_stack(cols), tuple(idx), ("simulated",) * len(idx))


# ---------------------------------------------------------------------------
# loading

def load_config(source, preset: str | None = None) -> ExperimentConfig:
    """Load a YAML file, or a built-in preset when ``source`` names one."""
    import yaml

    if isinstance(source, Mapping):
        return ExperimentConfig.from_dict(source, ".", preset)
    text = str(source)
    if text in PRESETS and not Path(text).exists():
        return ExperimentConfig.from_dict({}, ".", text)
    path = Path(text)
    if not path.exists():
        raise ConfigurationError(f"configuration file {path} does not exist (presets: {sorted(PRESETS)})")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: invalid YAML: {exc}") from None
    if isinstance(raw, Mapping) and "preset" in raw:
        raw = dict(raw)
        preset = raw.pop("preset")
        if preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    return ExperimentConfig.from_dict(raw, path.parent, preset)


# ---------------------------------------------------------------------------
# runners

def simulate_truth(cfg: ExperimentConfig) -> TrajectorySet:
    truth = cfg.truth()
    sim = cfg.data["simulation"]
    seeds = cfg.seeds()
    init = catalog_initial(truth, seeds["initial_state"], float(sim["initial_std"]))
    return simulate(truth, init, float(sim["horizon"]), float(sim["dt"]), seeds["simulation"],
                    burn_in=float(sim["burn_in"]), substeps=int(sim["substeps"]))


def catalog_initial(model: CoefficientModel, seed: int, std: float) -> np.ndarray:
    return std * np.random.default_rng(seed).standard_normal(model.layout.n)


def observed_part(cfg: ExperimentConfig, traj: TrajectorySet) -> TrajectorySet:
    names = cfg.observed_names()
    missing = [n for n in names if n not in traj.names]
    if missing:
        raise StructuralError(f"trajectory lacks observed variables {missing}")
    return traj.select(names).with_role("observed-data")


def run_simulate(cfg: ExperimentConfig, out) -> dict[str, Path]:
    """Truth simulation: ``observed.csv`` plus the withheld truth (``truth.csv``)."""
    out = Path(out)
    traj = simulate_truth(cfg)
    files = {"observed": write_trajectory(out / "observed.csv", observed_part(cfg, traj),
                                          {"experiment": cfg.name})}
    mode = cfg.data["simulation"]["write_truth"]
    if mode == "full":
        files["truth"] = write_trajectory(out / "truth.csv", traj, {"experiment": cfg.name})
    elif mode == "aggregate":
        view = cfg.truth_view(traj, cfg.reduced_layout())
        files["truth"] = write_trajectory(out / "truth.csv", view, {"experiment": cfg.name, "aggregated": True})
    return files


def load_observed(cfg: ExperimentConfig, out) -> tuple[TrajectorySet, TrajectorySet | None]:
    """Observed data from ``data``, an earlier ``simulate`` run in ``out``, or a fresh simulation.

    The second element is the in-memory truth when it had to be simulated.
    """
    lay = cfg.library().layout
    if cfg.data["data"] is not None:
        return _read_observed(cfg.resolve(cfg.data["data"]), lay), None
    cached = Path(out) / "observed.csv"
    if cached.exists():
        return _read_observed(cached, lay), None
    traj = simulate_truth(cfg)
    return observed_part(cfg, traj), traj


def _read_observed(path: Path, layout: StateLayout) -> TrajectorySet:
    traj = read_trajectory(path)
    names = [layout.names[i] for i in layout.observed_indices]
    missing = [n for n in names if n not in traj.names]
    if missing:
        raise ConfigurationError(f"{path} lacks observed variables {missing}")
    return traj.select(names).relabel(layout).with_role("observed-data")


def reference_indicator(cfg: ExperimentConfig, library: TermLibrary):
    """True structure on the learning library when the truth lives on it."""
    truth = cfg.truth()
    if truth.layout.names != library.layout.names or truth.library.shape() != library.shape():
        return None
    if any(truth.library.labels(n) != library.labels(n) for n in range(library.n_rows)):
        return None
    return truth.indicator()


def _write_coefficients(path: Path, model: CoefficientModel) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    lay = model.layout
    lines = ["row,term,coefficient"]
    for n, row in enumerate(model.library.rows):
        for t, v in zip(row, model.xi[n]):
            lines.append(f"{lay.names[n]},{t.label},{float(v)!r}")
    path.write_text("\n".join(lines) + "\n")
    return path


def evaluate(cfg: ExperimentConfig, model: CoefficientModel, out, truth_data: TrajectorySet | None = None,
             tag: str = "identified") -> tuple[dict, dict[str, Path]]:
    """Simulate ``model`` and the truth; report distances and write PDF/ACF plot data."""
    ev = cfg.data["evaluation"]
    truth = cfg.truth()
    dt = float(cfg.data["simulation"]["dt"])
    seed = cfg.seeds()["evaluation"]
    layout = model.layout
    report, mdata, tview = evaluate_identified(
        model, truth, float(ev["horizon"]), seed, dt=dt, variables=ev["variables"],
        truth_transform=lambda tr: cfg.truth_view(tr, layout), burn_in=float(ev["burn_in"]),
        bins=int(ev["bins"]), max_lag=float(ev["max_lag"]), substeps=int(ev["substeps"]),
        truth_substeps=max(int(ev["substeps"]), int(cfg.data["simulation"]["substeps"])),
        truth_data=truth_data, return_data=True)
    out = Path(out)
    files: dict[str, Path] = {}
    names = ev["variables"] or [n for n in layout.names if tview is not None and n in tview.names]
    for src, traj in ((tag, mdata), ("truth", tview)):
        if traj is None:
            continue
        for p in stats.write_series_stats(out / "plot-data" / f"{cfg.name}-{src}", traj,
                                          [n for n in names if n in traj.names], int(ev["bins"]),
                                          float(ev["max_lag"])):
            files[str(p.relative_to(out))] = p
    return report, files


def run_learn(cfg: ExperimentConfig, out) -> dict:
    """Learn a model; writes model, trace, causation matrices, evaluation report and plot data."""
    out = Path(out)
    obs, truth_traj = load_observed(cfg, out)
    library = cfg.library()
    init = cfg.initial_model()
    lc = cfg.learn_config()
    ref = reference_indicator(cfg, library)
    files: dict[str, Path] = {}
    model, trace = learn(obs, library, init, lc, reference=ref)
    files["model"] = write_model(out / "model.json", model, {"experiment": cfg.name})
    files["trace"] = trace.write_csv(out / "trace.csv")
    files["coefficients"] = _write_coefficients(out / "coefficients.csv", model)
    if trace.causation is not None:
        files["causation_values"] = write_causation_csv(out / "causation_values.csv", trace.causation, "values")
        files["causation_indicator"] = write_causation_csv(out / "causation_indicator.csv", trace.causation,
                                                           "indicator")
        files["causation_long"] = write_causation_long(out / "causation_long.csv", trace.causation)
    it = trace.column("iteration")
    pd = out / "plot-data" / f"{cfg.name}-learning"
    files["frobenius_trace"] = stats.write_curve(pd / "frobenius_trace.csv", it, trace.column("frobenius"),
                                                 ("iteration", "frobenius"))
    files["likelihood_trace"] = stats.write_curve(pd / "loglik_trace.csv", it, trace.column("log_likelihood"),
                                                  ("iteration", "log_likelihood"))
    summary = {"iterations": len(trace), "converged": trace.converged, "stop_reason": trace.stop_reason,
               "frozen_at": trace.frozen_at,
               "final_frobenius": float(trace.records[-1].frobenius) if trace.records else None,
               "retained_terms": int(trace.records[-1].n_retained) if trace.records else 0}
    del truth_traj
    if cfg.data["evaluation"]["enabled"]:
        report, pfiles = evaluate(cfg, model, out)
        files.update(pfiles)
        summary["evaluation"] = report
    files["summary"] = _write_json(out / "summary.json", summary)
    return {"files": files, "summary": summary, "model": model, "trace": trace}


def run_compare(cfg: ExperimentConfig, model_a, model_b=None, out=".") -> dict:
    """Compare two model files (the second defaults to the configured truth)."""
    out = Path(out)
    a = read_model(model_a)
    truth = cfg.truth() if model_b is None else read_model(model_b)
    ev = cfg.data["evaluation"]
    dt = float(cfg.data["simulation"]["dt"])
    transform = (lambda tr: cfg.truth_view(tr, a.layout)) if truth.layout.names != a.layout.names else None
    report = evaluate_identified(a, truth, float(ev["horizon"]), cfg.seeds()["evaluation"], dt=dt,
                                 variables=ev["variables"], truth_transform=transform,
                                 burn_in=float(ev["burn_in"]), bins=int(ev["bins"]), max_lag=float(ev["max_lag"]),
                                 substeps=int(ev["substeps"]),
                                 truth_substeps=max(int(ev["substeps"]), int(cfg.data["simulation"]["substeps"])))
    path = _write_json(out / "report.json", report)
    return {"files": {"report": path}, "report": report}


def run_stats(cfg: ExperimentConfig, trajectory, out=".", variables=None) -> dict:
    """PDF and ACF plot data of a trajectory file."""
    out = Path(out)
    traj = read_trajectory(trajectory)
    ev = cfg.data["evaluation"]
    names = variables or ev["variables"] or list(traj.names)
    paths = stats.write_series_stats(out / "plot-data" / cfg.name, traj, names, int(ev["bins"]),
                                     float(ev["max_lag"]))
    return {"files": {str(p.relative_to(out)): p for p in paths}}


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, default=_json_default))
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serializable: {type(o)}")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def environment_versions() -> dict[str, str]:
    import numba
    import scipy
    import yaml

    return {"cglearn": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "pyyaml": yaml.__version__}
