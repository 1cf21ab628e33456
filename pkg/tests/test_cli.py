import csv
import json
import subprocess
import sys

import pytest

from riskbounds.cli import CSV_HEADER, main, run_analysis

from conftest import CONFIGS


def test_black_scholes_run(tmp_path):
    assert main(["--config", str(CONFIGS / "bs.json"), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["beta_bar"] == pytest.approx(0.06125, rel=1e-5)
    assert rep["ell"] == 0.0 and rep["L_cap"] == 0.0
    assert any("1/2 - r/v" in w for w in rep["warnings"])
    with open(tmp_path / "bs_rough.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == CSV_HEADER
    assert {r[1] for r in rows[1:]} == {"-0.5"} and {r[2] for r in rows[1:]} == {"0.2"}
    assert all(r[5] == "rough" for r in rows[1:])


def test_brownian_needs_zero_rate_flag(tmp_path):
    assert main(["--config", str(CONFIGS / "brownian.json"), "--out", str(tmp_path)]) == 1
    assert main(["--config", str(CONFIGS / "brownian.json"), "--out", str(tmp_path),
                 "--allow-zero-rate", "--variant", "rough"]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["beta_bar"] == pytest.approx(0.0, abs=1e-6)
    lo = rep["curves"]["rough"]["theta_lower_range"]
    hi = rep["curves"]["rough"]["theta_upper_range"]
    assert max(abs(v) for v in lo + hi) < 1e-6
    with open(tmp_path / "brownian_rough.csv") as fh:
        row = next(iter(list(csv.reader(fh))[1:]))
    assert row[3] == "" and row[4] == ""  # no return bounds for a non-asset state


def test_sigma_violation_exits_with_config_error(tmp_path, caplog):
    assert main(["--config", str(CONFIGS / "bad_sigma.json"), "--out", str(tmp_path)]) == 1
    assert "sigma(1) = 0" in caplog.text


def test_unresolved_verdict_gives_partial_status(tmp_path):
    assert main(["--config", str(CONFIGS / "cir.json"), "--out", str(tmp_path)]) == 2
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["exit_code"] == 2
    assert (tmp_path / "cir_rough.csv").exists()
    assert not (tmp_path / "cir_intrinsic.csv").exists()
    assert any("unresolved" in w for w in rep["warnings"])


def test_missing_config_file(tmp_path):
    assert main(["--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1


def test_grid_overrides(tmp_path):
    rep = run_analysis(CONFIGS / "x2dw.json", tmp_path, ("rough",), allow_zero_rate=True,
                       grid_points=257, refinement_levels=4)
    assert rep.exit_code == 0
    with open(tmp_path / "x2dw_rough.csv") as fh:
        assert len(fh.readlines()) == 258


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "riskbounds", "--config", str(CONFIGS / "bad_sigma.json"),
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 1
    assert "sigma" in out.stderr
