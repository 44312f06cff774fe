"""Command line: ``cglearn {simulate,learn,compare,stats}``.

Exit codes: 0 success, 1 runtime or numerical failure, 2 configuration error.
Every run writes ``manifest.json`` into the output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import experiments
from .errors import CGLearnError, ConfigurationError, LearningAborted

log = logging.getLogger("cglearn")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigurationError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help="YAML experiment file or preset name (%s)" % ", ".join(sorted(experiments.PRESETS)))
    common.add_argument("--out", help="output directory (default: config 'output' or runs/<experiment>)")
    common.add_argument("--seed", type=int, help="master seed (overrides the configuration)")
    common.add_argument("--workers", type=int, default=None, help="worker threads for compiled kernels")
    common.add_argument("--threshold", type=float, help="causation threshold (overrides learn.threshold)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="cglearn", description="Causality-based learning of partially observed stochastic models.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="simulate the true system and write observed data")
    sub.add_parser("learn", parents=[common], help="run the learning loop and evaluate the identified model")
    c = sub.add_parser("compare", parents=[common], help="compare a model file against another or the truth")
    c.add_argument("model_a")
    c.add_argument("model_b", nargs="?")
    s = sub.add_parser("stats", parents=[common], help="PDF and ACF plot data of a trajectory file")
    s.add_argument("trajectory")
    s.add_argument("--variables", nargs="+")
    return p


def _set_workers(n: int | None) -> int:
    import warnings

    import numba

    avail = int(numba.config.NUMBA_NUM_THREADS)
    n = avail if n is None or n <= 0 else min(int(n), avail)
    with warnings.catch_warnings():
        # an outdated TBB only disables that threading layer; numba falls back on its own
        warnings.simplefilter("ignore", numba.NumbaWarning)
        numba.set_num_threads(n)
    return n


def _manifest(out: Path, args, cfg, status: str, code: int, files: dict, message: str = "") -> Path:
    listed = {}
    for key, path in sorted(files.items()):
        p = Path(path)
        if p.exists():
            listed[str(p.relative_to(out)) if p.is_relative_to(out) else str(p)] = experiments.file_digest(p)
    doc = {
        "command": args.command,
        "argv": getattr(args, "_argv", None),
        "status": status,
        "exit_code": code,
        "message": message,
        "config": cfg.to_dict() if cfg is not None else None,
        "config_sha256": cfg.sha256() if cfg is not None else None,
        "seeds": cfg.seeds() if cfg is not None else None,
        "workers": getattr(args, "_workers", None),
        "versions": experiments.environment_versions(),
        "outputs": listed,
    }
    out.mkdir(parents=True, exist_ok=True)
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=1, default=str))
    return path


def _run(args, cfg, out: Path) -> dict:
    if args.command == "simulate":
        return experiments.run_simulate(cfg, out)
    if args.command == "learn":
        res = experiments.run_learn(cfg, out)
        s = res["summary"]
        log.info("learned %s: %d iterations (%s), frobenius %s", cfg.name, s["iterations"], s["stop_reason"],
                 s["final_frobenius"])
        return res["files"]
    if args.command == "compare":
        return experiments.run_compare(cfg, args.model_a, args.model_b, out)["files"]
    return experiments.run_stats(cfg, args.trajectory, out, args.variables)["files"]


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=logging.INFO if "-v" in argv or "--verbose" in argv else logging.WARNING,
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigurationError as exc:
        print(f"cglearn: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cfg, files = None, {}
    args._argv = argv
    out = Path(args.out) if args.out else None
    try:
        cfg = experiments.load_config(args.config).with_overrides(seed=args.seed, threshold=args.threshold)
        out = Path(args.out or cfg.data["output"] or os.path.join("runs", cfg.name))
        out.mkdir(parents=True, exist_ok=True)
        args._workers = _set_workers(args.workers)
        files = _run(args, cfg, out)
    except ConfigurationError as exc:
        print(f"cglearn: configuration error: {exc}", file=sys.stderr)
        if out is not None:
            _manifest(out, args, cfg, "configuration-error", EXIT_CONFIG, files, str(exc))
        return EXIT_CONFIG
    except LearningAborted as exc:
        print(f"cglearn: learning aborted at iteration {exc.iteration}: {exc.cause}", file=sys.stderr)
        files = {"trace": exc.trace.write_csv(out / "trace.csv")}
        _manifest(out, args, cfg, "learning-aborted", EXIT_RUNTIME, files, str(exc))
        return EXIT_RUNTIME
    except (CGLearnError, OSError) as exc:
        print(f"cglearn: error: {exc}", file=sys.stderr)
        if out is not None:
            _manifest(out, args, cfg, "failed", EXIT_RUNTIME, files, str(exc))
        return EXIT_RUNTIME
    _manifest(out, args, cfg, "ok", EXIT_OK, files)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
