import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from boltzlab.cli import ConfigError, env_overrides, load_config, main, parse_config_text


def write_config(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def reports(out):
    return {p.stem: json.loads(p.read_text()) for p in (out / "reports").glob("*.json")}


def test_parse_config():
    cfg = parse_config_text("# comment\nsolver.dt = 0.1  # trailing\n\nxs.nu=1.5\n")
    assert cfg == {"solver.dt": "0.1", "xs.nu": "1.5"}
    with pytest.raises(ConfigError):
        parse_config_text("solver.dt 0.1\n")


def test_load_config_aliases_and_env(tmp_path):
    path = write_config(tmp_path, "gamma = 0.5\nb.kind = reference\n")
    cfg = load_config(path, environ={"BOLTZLAB_SOLVER_T_END": "2.5", "BOLTZLAB_NU": "0.7", "HOME": "/x"})
    assert cfg["xs.gamma"] == "0.5" and cfg["xs.kind"] == "reference"
    assert cfg["solver.t_end"] == "2.5" and cfg["xs.nu"] == "0.7"
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, "solver.bogus = 1\n", "bad.cfg"), environ={})
    with pytest.raises(ConfigError):
        env_overrides({"BOLTZLAB_NOT_A_KEY": "1"})


def test_nu_out_of_range_is_usage_error(tmp_path, capsys):
    code = main(["verify", "--config", write_config(tmp_path, "xs.nu = 2.5\n"), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "0 < nu < 2" in capsys.readouterr().err


def test_zero_stride_is_usage_error(tmp_path):
    cfg = write_config(tmp_path, "solver.stride = 0\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_env_override_reaches_validation(tmp_path, monkeypatch):
    monkeypatch.setenv("BOLTZLAB_SOLVER_STRIDE", "0")
    assert main(["simulate", "--out", str(tmp_path / "o")]) == 2


def test_uneven_table_fails_certifier(tmp_path):
    theta = np.geomspace(1e-4, 3.0, 60)
    b = np.sin(theta / 2) ** -2.0 * np.cos(theta / 2) ** 2
    rows = ["theta,b"] + [f"{t:.17g},{v:.17g}" for t, v in zip(theta, b)]
    rows += [f"{-t:.17g},{2 * v:.17g}" for t, v in zip(theta, b)]
    table = tmp_path / "b.csv"
    table.write_text("\n".join(rows) + "\n")
    cfg = write_config(tmp_path, f"b.kind = tabulated\nb.table = {table}\n")
    out = tmp_path / "o"
    assert main(["verify", "--config", cfg, "--out", str(out)]) == 1
    rep = reports(out)["cross_section_invariants"]
    assert rep["pass"] is False
    assert rep["measured"]["evenness_residual"] > 0.1


def test_verify_default_passes(tmp_path):
    out = tmp_path / "o"
    assert main(["verify", "--out", str(out)]) == 0
    reps = reports(out)
    for name in ("cross_section_invariants", "btilde_power_law", "change_of_variables", "decomposition",
                 "kernel_scaling", "lifted_set", "max_principle"):
        assert reps[name]["pass"], name
    manifest = json.loads((out / "manifest.json").read_text())
    listed = {a["path"] for a in manifest["artifacts"]}
    assert "reports/decomposition.json" in listed
    assert all(len(a["sha256"]) == 64 for a in manifest["artifacts"])


def test_bounds_indicator(tmp_path):
    cfg = write_config(tmp_path, "init.kind = indicator\n")
    out = tmp_path / "o"
    assert main(["bounds", "--config", cfg, "--out", str(out)]) == 0
    reps = reports(out)
    cone = reps["cone_lower_bound_0"]
    assert cone["measured"]["cone_measure"] == pytest.approx(2 * math.pi)
    scaling = reps["cone_scaling"]
    mu = scaling["measured"]["mu"]
    assert max(mu) / min(mu) <= 4.0


def test_bounds_zero_mass_fails(tmp_path):
    cfg = write_config(tmp_path, "init.kind = indicator\ninit.mass = 0\n")
    assert main(["bounds", "--config", cfg, "--out", str(tmp_path / "o")]) == 1


def read_series(out):
    with open(out / "timeseries.csv") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def test_simulate_bimodal(tmp_path):
    cfg = write_config(tmp_path, "init.kind = bimodal\nsolver.t_end = 0.2\nsolver.stride = 2\n")
    out = tmp_path / "o"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    series = read_series(out)
    assert list(series) == ["t", "m", "minBR", "mass", "energy", "entropy", "c_tilde", "C_tilde"]
    assert np.all(np.diff(series["entropy"]) <= 1e-6)
    assert len(list((out / "snapshots").glob("f_*.csv"))) == 3


def test_simulate_maxwellian_stationary(tmp_path):
    cfg = write_config(tmp_path, "solver.t_end = 0.2\n")
    out = tmp_path / "o"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    m = read_series(out)["m"]
    assert np.max(np.abs(m - m[0])) < 1e-6 * m[0]


def test_console_script_usage_error(tmp_path):
    cfg = write_config(tmp_path, "xs.nu = 0\n")
    exe = [sys.executable, "-m", "boltzlab.cli"]
    proc = subprocess.run(exe + ["bounds", "--config", cfg, "--out", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    proc = subprocess.run(["boltzlab", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "verify" in proc.stdout
