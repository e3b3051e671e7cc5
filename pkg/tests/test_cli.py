"""Command line driver: artifacts, exit codes, determinism."""
from __future__ import annotations

import csv
import json
import subprocess
import sys

import pytest

from lubrix.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, fmt, main

QUICK = """
[gap]
kind = "{kind}"
mean = 1.0
cos_amplitudes = {amps}

[grid]
n = 64
nx = 16
nz = 8

[physics]
s = 2.0
mean_density = 0.5

[reynolds]
solver = "{solver}"
fv_levels = [32, 64, 128]

[thinfilm]
eps = 0.2
eps_list = [0.2, 0.1]
delta_min = 0.05
max_newton = {max_newton}

[checks]
samples = 3
identity_samples = 50
"""


def _config(tmp_path, kind="constant", amps="[]", solver="shooting", max_newton=40):
    path = tmp_path / "run.toml"
    path.write_text(QUICK.format(kind=kind, amps=amps, solver=solver, max_newton=max_newton))
    return str(path)


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.mark.parametrize("group, command, artifact", [
    ("reynolds", "solve", "reynolds.json"),
    ("reynolds", "oracle-compare", "oracle.json"),
    ("thinfilm", "solve", "thinfilm.json"),
    ("thinfilm", "sweep", "sweep.json"),
    ("check", "inequalities", "checks.json"),
    ("eos", "identities", "eos.json"),
])
def test_commands_succeed_and_write_reports(tmp_path, capsys, group, command, artifact):
    cfg = _config(tmp_path)
    code, out, _ = _run(capsys, group, command, "--config", cfg, "--out-dir", str(tmp_path / "out"))
    assert code == EXIT_OK
    summary = json.loads(out)
    assert summary["status"] == "ok"
    report = json.loads((tmp_path / "out" / artifact).read_text())
    assert report["status"] == "ok" and report["config_hash"] == summary["config_hash"]
    assert report["command"] == f"{group} {command}"
    for name in report["artifacts"]:
        assert (tmp_path / "out" / name).exists()


def test_constant_gap_reynolds_values(tmp_path, capsys):
    cfg = _config(tmp_path)
    assert _run(capsys, "reynolds", "solve", "--config", cfg, "--out-dir", str(tmp_path))[0] == EXIT_OK
    rep = json.loads((tmp_path / "reynolds.json").read_text())
    assert rep["results"]["reynolds"]["lambda_flux"] == pytest.approx(-0.5, abs=1e-10)
    raw = (tmp_path / "reynolds.csv").read_bytes()
    assert raw.count(b"\r\n") == 65
    rows = list(csv.DictReader((tmp_path / "reynolds.csv").open(newline="")))
    assert len(rows) == 64
    assert all(r["config_hash"] == rep["config_hash"] for r in rows)
    assert all(abs(float(r["rho"]) - 0.5) < 1e-10 for r in rows)


def test_fmt_round_trips_doubles():
    for x in (0.1, 1 / 3, -2.5e-300, 123456789.123456789):
        assert float(fmt(x)) == x


def test_checks_are_deterministic_and_seeded(tmp_path, capsys):
    cfg = _config(tmp_path)
    results = []
    for sub, seed in (("a", "5"), ("b", "5"), ("c", "6")):
        out_dir = tmp_path / sub
        assert _run(capsys, "check", "inequalities", "--config", cfg, "--out-dir", str(out_dir),
                    "--seed", seed, "--samples", "4")[0] == EXIT_OK
        results.append(json.loads((out_dir / "checks.json").read_text())["results"])
    assert results[0] == results[1]
    assert results[0] != results[2]
    assert results[0]["first_seed"] == 5
    assert results[0]["inequalities"]["poincare"]["samples"] == 4


def test_identical_config_gives_identical_metrics(tmp_path, capsys):
    cfg = _config(tmp_path, kind="cosine", amps="[0.5]", solver="fv")
    results = []
    for sub in ("a", "b"):
        for command in (("reynolds", "solve"), ("eos", "identities")):
            assert _run(capsys, *command, "--config", cfg, "--out-dir", str(tmp_path / sub))[0] == EXIT_OK
        results.append([json.loads((tmp_path / sub / name).read_text())["results"]
                        for name in ("eos.json", "reynolds.json")])
    for a, b in zip(*results):
        a.get("reynolds", {}).pop("wall_time_s", None)
        b.get("reynolds", {}).pop("wall_time_s", None)
        assert a == b
    assert (tmp_path / "a" / "reynolds.csv").read_bytes() == (tmp_path / "b" / "reynolds.csv").read_bytes()


def test_invalid_config_exits_3_with_all_violations(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text('[physics]\nmu = -1.0\nmean_density = 2.0\n[thinfilm]\nmethod = "gauss"\n')
    code, _, err = _run(capsys, "reynolds", "solve", "--config", str(path), "--out-dir", str(tmp_path))
    assert code == EXIT_CONFIG
    payload = json.loads(err.strip().splitlines()[-1])
    assert payload["error"]["type"] == "ConfigError"
    assert len(payload["error"]["violations"]) >= 3


def test_missing_config_and_bad_flags_exit_3(tmp_path, capsys):
    assert _run(capsys, "eos", "identities", "--config", str(tmp_path / "none.toml"))[0] == EXIT_CONFIG
    cfg = _config(tmp_path)
    assert _run(capsys, "check", "inequalities", "--config", cfg, "--samples", "0")[0] == EXIT_CONFIG
    assert _run(capsys, "thinfilm", "sweep", "--config", cfg, "--threads", "0")[0] == EXIT_CONFIG


def test_failed_sweep_exits_2_with_partial_report(tmp_path, capsys):
    cfg = _config(tmp_path, kind="cosine", amps="[0.5]", max_newton=1)
    code, _, err = _run(capsys, "thinfilm", "sweep", "--config", cfg, "--out-dir", str(tmp_path))
    assert code == EXIT_SOLVER
    assert json.loads(err.strip().splitlines()[-1])["status"] == "failed"
    rep = json.loads((tmp_path / "sweep.json").read_text())
    assert rep["status"] == "failed"
    assert [row["status"] for row in rep["results"]["sweep"]] == ["failed", "failed"]


def test_module_entry_point_reports_version():
    res = subprocess.run([sys.executable, "-m", "lubrix.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("lubrix ")
