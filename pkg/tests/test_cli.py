import csv
import json
import math
import subprocess
import sys

import pytest

from ermsim.cli import main
from ermsim.export import read_csv

MODEL = """
units = "2pi_hz"
[model]
system_size = 15.4
coupling = 4.0
regime = 0.5
energy_scale = 980.0
"""

TRAP = """
units = "2pi_hz"
[trap]
secular_freq = 1.0e6
red_detuning = -3600.0
blue_detuning = -4100.0
lamb_dicke = 0.05
eta_rabi_red = 5870.0
eta_rabi_blue = 1960.0
ramp_duration = 1.3e-3
"""


def _write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _run(tmp_path, sub, cfg, out="out", *extra):
    code = main([sub, "--config", str(cfg), "--out", str(tmp_path / out), *extra])
    return code, tmp_path / out


def _json(path):
    return json.loads(path.read_text())


def test_map_params_fig8(tmp_path, capsys):
    code, out = _run(tmp_path, "map-params", _write(tmp_path, TRAP))
    assert code == 0
    params = _json(out / "params.json")
    m = params["model"]
    assert m["system_size"] == pytest.approx(15.4, abs=0.05)
    assert m["coupling"] == pytest.approx(4.0, abs=0.05)
    assert m["regime"] == pytest.approx(0.5, abs=0.005)
    assert m["energy_scale_over_hbar_2pi_hz"] == pytest.approx(980, rel=0.01)
    assert params["feasibility"]["status"] == "pass"
    assert json.loads(capsys.readouterr().out)["model"]["system_size"] == pytest.approx(15.4, abs=0.05)


def test_ramp_quench_single_row(tmp_path):
    cfg = _write(tmp_path, MODEL + "[protocol]\ntau_f = 0\n[space]\nfock_cutoff = 30\n")
    code, out = _run(tmp_path, "ramp", cfg)
    assert code == 0
    rows = read_csv(out / "witness.csv")
    assert len(rows) == 1
    r = rows[0]
    assert float(r["tau"]) == 0 and float(r["p0"]) == 1
    assert float(r["n_mean"]) == 0 and float(r["jz_mean"]) == -0.5 and float(r["h_mean"]) == -0.5
    assert list(r) == ["tau", "lambda", "h_mean", "n_mean", "jz_mean", "p0"]


def test_manifest_contents(tmp_path):
    cfg = _write(tmp_path, MODEL + "[protocol]\ntau_f = 1.0\n[space]\nfock_cutoff = 30\n")
    code, out = _run(tmp_path, "ramp", cfg, "out", "--tolerance-scale", "2")
    assert code == 0
    man = _json(out / "manifest.json")
    assert man["status"] == 0 and man["subcommand"] == "ramp"
    assert man["config"]["model"]["system_size"] == 15.4
    assert set(man["versions"]) >= {"ermsim", "numpy", "scipy", "python"}
    assert man["tolerance_scale"] == 2 and man["wall_time_s"] >= 0
    assert sorted(man["outputs"]) == ["outcome.json", "witness.csv"]
    assert _json(out / "outcome.json")["rtol"] == pytest.approx(2e-10)


def test_json_and_toml_agree(tmp_path):
    toml_cfg = _write(tmp_path, MODEL + "[protocol]\ntau_f = 2.0\n[space]\nfock_cutoff = 40\n")
    js = {"units": "2pi_hz", "model": {"system_size": 15.4, "coupling": 4.0, "regime": 0.5,
                                        "energy_scale": 980.0},
          "protocol": {"tau_f": 2.0}, "space": {"fock_cutoff": 40}}
    json_cfg = _write(tmp_path, json.dumps(js), "run.json")
    assert _run(tmp_path, "ramp", toml_cfg, "a")[0] == 0
    assert _run(tmp_path, "ramp", json_cfg, "b")[0] == 0
    assert (tmp_path / "a" / "witness.csv").read_bytes() == (tmp_path / "b" / "witness.csv").read_bytes()


def test_bad_config_exit_code(tmp_path):
    cfg = _write(tmp_path, MODEL.replace("regime = 0.5", "regime = 1.5") + "[protocol]\ntau_f = 1\n")
    code, out = _run(tmp_path, "ramp", cfg)
    assert code == 2
    man = _json(out / "manifest.json")
    assert man["status"] == 2 and "regime" in man["error"]["message"]


def test_unparseable_config(tmp_path):
    cfg = _write(tmp_path, "this is = = not toml", "bad.toml")
    assert _run(tmp_path, "spectrum", cfg)[0] == 2


def test_mcwf_requires_seed(tmp_path, capsys):
    cfg = _write(tmp_path, MODEL + "[protocol]\ntau_f = 1\n[noise]\npreset = \"reference\"\n")
    code, out = _run(tmp_path, "mcwf", cfg)
    assert code == 2
    assert "seed mandatory for trajectory runs" in _json(out / "manifest.json")["error"]["message"]
    assert "seed mandatory" in capsys.readouterr().err


def test_numeric_failure_writes_diagnostics(tmp_path):
    cfg = _write(tmp_path, MODEL.replace("regime = 0.5", "regime = 0.0")
                 + "[protocol]\ntau_f_over_pi = 20\n[space]\nfock_cutoff = 10\n")
    code, out = _run(tmp_path, "ramp", cfg)
    assert code == 3
    diag = _json(out / "diagnostics.json")
    assert diag["error"] == "CutoffError" and diag["diagnostics"]["fock_cutoff"] == 10


def test_validate_reports_regime(tmp_path):
    cfg = _write(tmp_path, 'subcommand = "spectrum"\n' + MODEL.replace("regime = 0.5", "regime = 1.5"))
    code, out = _run(tmp_path, "validate", cfg)
    assert code == 2
    rep = _json(out / "validation.json")
    assert not rep["valid"] and any("regime" in i for i in rep["issues"])
    assert not (out / "spectrum.csv").exists()


def test_validate_trap_feasibility(tmp_path):
    code, out = _run(tmp_path, "validate", _write(tmp_path, 'subcommand = "map-params"\n' + TRAP))
    assert code == 0
    rep = _json(out / "validation.json")
    assert rep["valid"] and rep["feasibility"]["status"] == "pass"


def test_validate_missing_seed(tmp_path):
    cfg = _write(tmp_path, 'subcommand = "mcwf"\n' + MODEL + "[protocol]\ntau_f = 1\n[noise]\npreset = \"reference\"\n")
    code, out = _run(tmp_path, "validate", cfg)
    assert code == 2
    assert any("seed mandatory for trajectory runs" in i for i in _json(out / "validation.json")["issues"])


MCWF = MODEL + """
[protocol]
tau_f = 3.0
[noise]
motional_dephasing = 300.0
qubit_dephasing = 3000.0
heating_rate = 2000.0
[space]
fock_cutoff = 20
[mcwf]
n_traj = 30
samples = 4
"""


def test_mcwf_deterministic_outputs(tmp_path):
    cfg = _write(tmp_path, MCWF)
    assert _run(tmp_path, "mcwf", cfg, "a", "--seed", "2024")[0] == 0
    assert _run(tmp_path, "mcwf", cfg, "b", "--seed", "2024")[0] == 0
    assert _run(tmp_path, "mcwf", cfg, "c", "--seed", "2025")[0] == 0
    assert _run(tmp_path, "mcwf", cfg, "d", "--seed", "2024", "--workers", "3")[0] == 0
    a = (tmp_path / "a" / "mcwf_series.csv").read_bytes()
    assert a == (tmp_path / "b" / "mcwf_series.csv").read_bytes()
    assert a != (tmp_path / "c" / "mcwf_series.csv").read_bytes()
    assert (tmp_path / "a" / "mcwf_summary.json").read_bytes() == (tmp_path / "b" / "mcwf_summary.json").read_bytes()
    summary = _json(tmp_path / "a" / "mcwf_summary.json")
    assert summary["jumps"]["total"] > 0
    # a different worker count regroups floating-point sums but not the trajectories
    threaded = _json(tmp_path / "d" / "mcwf_summary.json")
    assert threaded["jumps"] == summary["jumps"]
    for name, res in summary["results"].items():
        assert threaded["results"][name]["mean"] == pytest.approx(res["mean"], abs=1e-12)
    assert set(summary["results"]) == {"p0", "p0_tilde", "p_down", "n", "jz"}
    assert {"mean", "mre", "mre_prefactor"} <= set(summary["results"]["p0"])


def test_spectrum_and_scan_outputs(tmp_path):
    cfg = _write(tmp_path, MODEL + "[space]\nfock_cutoff = 60\n[scan]\naxis = \"tau_f\"\n"
                 "grid = {start = 0, stop = 2, num = 3, scale = \"pi\"}\n")
    code, out = _run(tmp_path, "spectrum", cfg, "s")
    assert code == 0
    with open(out / "peres.csv") as fh:
        header = next(csv.reader(fh))
    assert header == ["energy", "n_mean", "jz_mean", "parity", "entropy", "emergent_flag"]
    code, out = _run(tmp_path, "scan", cfg, "c")
    assert code == 0
    rows = read_csv(out / "scan.csv")
    assert [float(r["axis_value"]) for r in rows] == pytest.approx([0, math.pi, 2 * math.pi])
    assert float(rows[0]["p0_tilde"]) == 1


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ermsim.cli", "map-params", "--config",
                           str(_write(tmp_path, TRAP)), "--out", str(tmp_path / "o")],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["feasibility"]["status"] == "pass"
