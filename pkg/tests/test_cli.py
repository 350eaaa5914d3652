import csv
import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from syncon import cli
from syncon.config import config_hash
from syncon.estimators import DID, estimate
from syncon.fixtures import fixture_path, load_fixture
from syncon.panel import Panel, save_panel
from syncon.qp import QpError


def _write_panel(path, panel):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        save_panel(panel, fh)
    return str(path)


def _rows(path):
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _run(argv, capsys=None):
    rc = cli.main([str(a) for a in argv])
    err = capsys.readouterr().err if capsys else ""
    return rc, err


def test_fit_noiseless_twin(tmp_path):
    rng = np.random.default_rng(0)
    c = rng.standard_normal((3, 12))
    y0 = 0.25 * c[0] + 0.75 * c[2] + 2.0 * (np.arange(12) >= 9)
    path = _write_panel(tmp_path / "p.csv", Panel(np.vstack([y0, c]), 9, np.arange(2000, 2012),
                                                  ("t", "a", "b", "c")))
    out = tmp_path / "out"
    rc, _ = _run(["fit", "--panel", path, "--treated", "t", "--treat-period", 2009, "--out", out])
    assert rc == 0
    w = {r["unit"]: float(r["weight"]) for r in _rows(out / "weights.csv")}
    assert w == pytest.approx({"a": 0.25, "b": 0.0, "c": 0.75}, abs=1e-8)
    eff = [float(r["effect"]) for r in _rows(out / "effects.csv")]
    np.testing.assert_allclose(eff, 2.0, atol=1e-8)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["method"] == "sc" and summary["t0"] == 9


def test_fit_did_matches_library(tmp_path):
    out = tmp_path / "out"
    rc, _ = _run(["fit", "--panel", fixture_path(), "--treated", "S03", "--treat-period", 1989,
                  "--method", "did", "--out", out])
    assert rc == 0
    lib = estimate(load_fixture(), DID)
    eff = np.array([float(r["effect"]) for r in _rows(out / "effects.csv")])
    assert np.array_equal(eff, lib.effects.values)


def test_fit_constraints_flag(tmp_path):
    out = tmp_path / "out"
    rc, _ = _run(["fit", "--panel", fixture_path(), "--treated", "S03", "--treat-period", 1989,
                  "--constraints", "nonneg,sum1,intercept", "--out", out])
    assert rc == 0
    assert json.loads((out / "summary.json").read_text())["method"] == "sc_demeaned"


def test_malformed_csv_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("unit,period,outcome\na,1,1\na,2,oops\nb,1,1\nb,2,2\n")
    rc, err = _run(["fit", "--panel", bad, "--treated", "a", "--treat-period", 2, "--out", tmp_path], capsys)
    assert rc == 2
    assert err.startswith("syncon: error[input]:") and "row 3" in err
    assert err.count("\n") == 1


def test_missing_panel_exit_2(tmp_path, capsys):
    rc, err = _run(["fit", "--panel", tmp_path / "nope.csv", "--treated", "a", "--treat-period", 2], capsys)
    assert rc == 2 and "error[input]" in err


def test_numeric_failure_exit_3(tmp_path, capsys, monkeypatch):
    def boom(*a, **k):
        raise QpError("gram matrix is not positive semi-definite")
    monkeypatch.setattr(cli, "estimate", boom)
    rc, err = _run(["fit", "--panel", fixture_path(), "--treated", "S03", "--treat-period", 1989,
                    "--out", tmp_path], capsys)
    assert rc == 3 and err.startswith("syncon: error[numeric]:")


def test_simulate_is_reproducible(tmp_path):
    for d in ("a", "b"):
        assert _run(["simulate", "--t0", 15, "--seed", 4, "--rep", 2, "--out", tmp_path / d])[0] == 0
    a = (tmp_path / "a" / "panel.csv").read_bytes()
    assert a == (tmp_path / "b" / "panel.csv").read_bytes()
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()
    _run(["simulate", "--t0", 15, "--seed", 4, "--rep", 3, "--out", tmp_path / "c"])
    assert a != (tmp_path / "c" / "panel.csv").read_bytes()


def test_asymptotics_default_dgp(tmp_path):
    assert _run(["asymptotics", "--out", tmp_path])[0] == 0
    rows = {r["estimator"]: r for r in _rows(tmp_path / "asymptotics.csv")}
    assert float(rows["sc"]["mu_hat1"]) == pytest.approx(0.70, abs=1e-8)
    assert float(rows["sc"]["asymptotic_bias"]) == pytest.approx(0.30, abs=1e-8)
    assert float(rows["sc"]["se"]) == pytest.approx(1.16, abs=5e-3)
    assert float(rows["did"]["se"]) == pytest.approx(1.40, abs=5e-3)
    doc = json.loads((tmp_path / "asymptotics.json").read_text())
    assert doc["gamma"]["gamma_many_groups"] == pytest.approx(0.30, abs=1e-12)


def test_asymptotics_limit_section(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"limit": {"mu0": [1, 1], "mu": [[0.5, 1], [1.5, 1], [0.5, 0], [1.5, 1]],
                                         "omega0": [0, 0], "Omega0": [[1, 0], [0, 1]], "sigma2": 1,
                                         "post_mean": [0, 0]}}))
    rc = cli.main(["asymptotics", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert rc == 0
    doc = json.loads((tmp_path / "o" / "asymptotics.json").read_text())
    np.testing.assert_allclose(doc["estimators"]["sc"]["reconstructed_loadings"], [1.038, 0.8458], atol=2e-3)
    assert doc["estimators"]["did"]["reconstructed_loadings"] == [1.0, 0.75]


def test_detrend_common_trend(tmp_path):
    t = np.arange(20.0)
    trend = 0.3 * t ** 1.5
    y = np.vstack([trend + np.sin(t), trend, trend, trend])
    path = _write_panel(tmp_path / "p.csv", Panel(y, 15, np.arange(1990, 2010), ("t", "a", "b", "c")))
    out = tmp_path / "out"
    assert _run(["detrend", "--panel", path, "--treated", "t", "--treat-period", 2005, "--out", out])[0] == 0
    rows = _rows(out / "detrended.csv")
    ctrl = [float(r["outcome"]) for r in rows if r["unit"] != "t"]
    assert max(abs(v) for v in ctrl) < 1e-12
    doc = ET.parse(out / "detrend.svg").getroot()
    assert len(doc.findall(".//{http://www.w3.org/2000/svg}polyline")) == 4


def test_manifest_hash_rederives(tmp_path):
    out = tmp_path / "out"
    assert _run(["mc", "--reps", 3, "--seed", 2, "--out", out])[0] == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["config_sha256"] == config_hash(man["config"])
    assert man["seed"] == 2 and man["outputs"] == ["mc.csv", "mc.json"]
    assert set(man["versions"]) == {"syncon", "numpy", "numba", "python"}
    assert "time" not in json.dumps(man).lower()


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"mc": {"reps": 2, "dgp": {"J": 4, "K": 2, "sigmaa": 1}}}))
    rc, err = _run(["mc", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert rc == 2 and "mc.dgp.sigmaa" in err


def test_config_output_formats(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"mc": {"reps": 2, "t0_grid": [10]}, "output": {"formats": ["json"]}}))
    assert _run(["mc", "--config", cfg, "--out", tmp_path / "o"])[0] == 0
    assert not (tmp_path / "o" / "mc.csv").exists() and (tmp_path / "o" / "mc.json").exists()


def test_placebo_command(tmp_path):
    out = tmp_path / "out"
    rc, _ = _run(["placebo", "--panel", fixture_path(), "--window", "1985-1988", "--methods",
                  "sc,sc_demeaned", "--out", out])
    assert rc == 0
    rows = _rows(out / "placebo_rmse.csv")
    assert len(rows) == 39 * 2
    ET.parse(out / "placebo_scatter.svg")


def test_placebo_bad_window(tmp_path, capsys):
    rc, err = _run(["placebo", "--panel", fixture_path(), "--window", "1985", "--out", tmp_path], capsys)
    assert rc == 2 and "window" in err


def test_mc_workers_do_not_change_bytes(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"mc": {"reps": 250, "t0_grid": [10, 20], "dgp": {"J": 6, "K": 3}}}))
    blobs = []
    for w in (1, 2):
        out = tmp_path / f"w{w}"
        assert _run(["mc", "--config", cfg, "--workers", w, "--seed", 1, "--out", out])[0] == 0
        blobs.append(tuple((out / n).read_bytes() for n in ("mc.csv", "mc.json", "manifest.json")))
    assert blobs[0] == blobs[1]


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "syncon.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("syncon ")
