import json
import subprocess
import sys

import pytest
import yaml

from cglearn.cli import main


def write_cfg(tmp_path, doc, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return str(p)


def test_simulate_l84_writes_full_record(tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "--config", "lorenz84", "--out", str(out)]) == 0
    truth = (out / "truth.csv").read_text().splitlines()
    assert len(truth) == 500_001
    assert truth[0] == "t,x,y,z"
    assert (out / "observed.csv").read_text().splitlines()[0] == "t,y,z"
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok" and man["exit_code"] == 0
    assert set(man["outputs"]) == {"observed.csv", "truth.csv"}
    assert set(man["seeds"]) >= {"simulation", "learn", "evaluation"}


def test_fixed_seed_reproduces_files(tmp_path):
    cfg = write_cfg(tmp_path, {"preset": "lorenz84", "simulation": {"horizon": 5.0}})
    for d in ("a", "b", "c"):
        seed = ["--seed", "9"] if d == "c" else []
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / d)] + seed) == 0
    a, b, c = ((tmp_path / d / "truth.csv").read_bytes() for d in "abc")
    assert a == b
    assert a != c


def test_zero_horizon_is_configuration_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"preset": "lorenz84", "simulation": {"horizon": 0}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_unknown_key_is_configuration_error(tmp_path):
    cfg = write_cfg(tmp_path, {"preset": "lorenz84", "learn": {"treshold": 0.1}})
    assert main(["learn", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["status"] == "configuration-error"


def test_missing_config_file(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")]) == 2


def test_compare_identical_models(tmp_path):
    from cglearn.dynamics import catalog
    from cglearn.dynamics.io import write_model

    m = write_model(tmp_path / "m.json", catalog.lorenz84_truth())
    cfg = write_cfg(tmp_path, {"preset": "lorenz84", "evaluation": {"horizon": 20.0, "burn_in": 1.0}})
    out = tmp_path / "cmp"
    assert main(["compare", "--config", cfg, "--out", str(out), str(m), str(m)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["mean_pdf_l1"] == 0.0 and rep["mean_acf_l2"] == 0.0


def test_learn_small_run_outputs(tmp_path):
    cfg = write_cfg(tmp_path, {"preset": "lorenz84", "simulation": {"horizon": 20.0},
                               "learn": {"max_iterations": 3},
                               "evaluation": {"horizon": 10.0, "burn_in": 1.0}})
    out = tmp_path / "learn"
    assert main(["learn", "--config", cfg, "--out", str(out)]) == 0
    for name in ("model.json", "trace.csv", "coefficients.csv", "causation_values.csv", "causation_indicator.csv",
                 "summary.json", "manifest.json"):
        assert (out / name).exists(), name
    summary = json.loads((out / "summary.json").read_text())
    assert summary["iterations"] == len((out / "trace.csv").read_text().splitlines()) - 1
    assert (out / "plot-data" / "lorenz84-learning" / "frobenius_trace.csv").exists()
    assert (out / "plot-data" / "lorenz84-truth" / "y_pdf.csv").exists()


def test_stats_command(tmp_path):
    cfg = write_cfg(tmp_path, {"preset": "lorenz84", "simulation": {"horizon": 5.0}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    assert main(["stats", "--config", cfg, "--out", str(tmp_path / "st"), str(tmp_path / "s" / "truth.csv"),
                 "--variables", "x"]) == 0
    assert sorted(p.name for p in (tmp_path / "st" / "plot-data" / "lorenz84").iterdir()) == ["x_acf.csv",
                                                                                               "x_pdf.csv"]


def test_console_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "cglearn.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("simulate", "learn", "compare", "stats"):
        assert cmd in res.stdout


@pytest.mark.parametrize("argv", [["bogus"], ["learn"]])
def test_bad_arguments(argv, capsys):
    assert main(argv) == 2
    assert "configuration error" in capsys.readouterr().err
