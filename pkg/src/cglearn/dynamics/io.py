"""Trajectory CSV and model JSON file formats.

Trajectories are CSV files with a mandatory header: ``t`` followed by one column
per state name, values printed with 17 significant digits. A ``.meta.json``
sidecar records the layout, step size and per-column roles so a file can be read
back without outside knowledge.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError, StructuralError
from .model import CoefficientModel, StateLayout, TermLibrary, TrajectorySet, make_term


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def write_trajectory(path, traj: TrajectorySet, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.column_stack([traj.times, traj.values])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=",".join(("t",) + traj.names), comments="")
    meta = {"dt": traj.dt, "layout": traj.layout.to_dict(), "columns": list(traj.names),
            "roles": dict(zip(traj.names, traj.roles))}
    if extra:
        meta.update(extra)
    _sidecar(path).write_text(json.dumps(meta, indent=2))
    return path


def read_trajectory(path, layout: StateLayout | None = None, dt: float | None = None) -> TrajectorySet:
    """Read a trajectory CSV; layout, dt and roles come from the sidecar when not given."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"trajectory file {path} does not exist")
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    if not header or header[0] != "t":
        raise StructuralError(f"{path}: first column must be 't'")
    names = header[1:]
    meta = json.loads(_sidecar(path).read_text()) if _sidecar(path).exists() else {}
    if layout is None:
        if "layout" not in meta:
            raise ConfigurationError(f"{path}: no layout given and no sidecar metadata found")
        layout = StateLayout.from_dict(meta["layout"])
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(header):
        raise StructuralError(f"{path}: header has {len(header)} columns, data has {data.shape[1]}")
    if dt is None:
        dt = meta.get("dt")
        if dt is None:
            dt = float(data[1, 0] - data[0, 0])
    roles = meta.get("roles", {})
    cols = tuple(layout.index(n) for n in names)
    return TrajectorySet(layout, float(dt), data[:, 1:], cols, tuple(roles.get(n, "observed-data") for n in names))


def model_to_dict(model: CoefficientModel) -> dict:
    lib = model.library
    lay = lib.layout
    rows = {}
    for n, (row, c) in enumerate(zip(lib.rows, model.xi)):
        rows[lay.names[n]] = [{"label": t.label, "factors": [[lay.names[v], e] for v, e in t.factors],
                               "coefficient": float(v)} for t, v in zip(row, c)]
    pairs = [[[lay.names[ra], lib.rows[ra][ma].label], [lay.names[rb], lib.rows[rb][mb].label]]
             for (ra, ma), (rb, mb) in lib.energy_pairs]
    return {
        "layout": lay.to_dict(),
        "terms": rows,
        "noise": {nm: float(s) for nm, s in zip(lay.names, model.noise)},
        "energy_pairs": pairs,
        "stencil_radius": lib.stencil_radius,
        "conditionally_linear": lib.conditionally_linear,
    }


def model_from_dict(d: dict) -> CoefficientModel:
    try:
        lay = StateLayout.from_dict(d["layout"])
        rows, xi = [], []
        for n, name in enumerate(lay.names):
            entries = d["terms"][name]
            rows.append(tuple(make_term(lay, n, [(lay.index(v), int(e)) for v, e in t["factors"]], t["label"])
                              for t in entries))
            xi.append([float(t["coefficient"]) for t in entries])
        radius = int(d.get("stencil_radius", 0))
        tmp = TermLibrary(lay, tuple(rows), radius, conditionally_linear=False)
        pairs = tuple(((lay.index(ra), tmp.term_index(lay.index(ra), la)), (lay.index(rb), tmp.term_index(lay.index(rb), lb)))
                      for (ra, la), (rb, lb) in d.get("energy_pairs", []))
        lib = TermLibrary(lay, tuple(rows), radius, pairs,
                          bool(d.get("conditionally_linear", True)))
        noise = [float(d["noise"][nm]) for nm in lay.names]
    except KeyError as exc:
        raise ConfigurationError(f"model file lacks field {exc}") from None
    return CoefficientModel(lib, tuple(np.array(x) for x in xi), noise)


def write_model(path, model: CoefficientModel, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = model_to_dict(model)
    if extra:
        d.update(extra)
    path.write_text(json.dumps(d, indent=1))
    return path


def read_model(path) -> CoefficientModel:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"model file {path} does not exist")
    return model_from_dict(json.loads(path.read_text()))
