"""Configuration parsing, validation, hashing and the JSON report."""
from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lubrix.config import ConfigError, RunConfig, SolverReport, load_config, parse_config

EXAMPLE = """
[eos]
family = "rational"
rho_bar = 1.0

[gap]
kind = "cosine"
mean = 1.0
cos_amplitudes = [0.5]

[physics]
mu = 1.0
s = 1.0
mean_density = 0.4

[thinfilm]
eps_list = [0.2, 0.1, 0.05]
"""


def test_defaults_match_benchmark():
    cfg = RunConfig()
    assert cfg.mean_density == pytest.approx(0.4)
    assert cfg.gap_profile().h_min == pytest.approx(0.5)
    assert cfg.thinfilm.eps_list == (0.2, 0.1, 0.05)


def test_example_loads_and_hash_is_stable(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(EXAMPLE)
    a, b = load_config(path), load_config(path)
    assert a == b
    assert a.config_hash == b.config_hash == RunConfig().config_hash
    assert len(a.config_hash) == 16


def test_hash_ignores_output_dir_but_not_physics():
    base = parse_config({})
    assert parse_config({"output": {"dir": "elsewhere"}}).config_hash == base.config_hash
    assert parse_config({"physics": {"s": 2.0}}).config_hash != base.config_hash


def test_integers_accepted_for_floats():
    cfg = parse_config({"physics": {"mu": 2}})
    assert isinstance(cfg.physics.mu, float) and cfg.physics.mu == 2.0


def test_constant_gap_without_amplitudes():
    cfg = parse_config({"gap": {"kind": "constant", "mean": 1.0}})
    assert cfg.gap_profile().is_constant


def test_mass_or_mean_density():
    assert parse_config({"physics": {"mass": 0.3}}).mean_density == pytest.approx(0.3)
    with pytest.raises(ConfigError, match="only one"):
        parse_config({"physics": {"mass": 0.3, "mean_density": 0.3}})


def test_all_violations_reported_together():
    with pytest.raises(ConfigError) as info:
        parse_config({
            "physics": {"mu": -1.0, "mean_density": 1.5, "colour": "red"},
            "thinfilm": {"eps_list": [0.1, 0.2], "method": "gauss"},
            "grid": {"nx": "many"},
            "extra": {},
        })
    errors = info.value.errors
    text = "\n".join(errors)
    for needle in ("physics.mu", "maximal density", "unknown key 'physics.colour'", "strictly decreasing",
                   "thinfilm.method", "'grid.nx'", "unknown section 'extra'"):
        assert needle in text, needle
    assert len(errors) >= 7


def test_truncation_knot_must_exceed_mean_density():
    with pytest.raises(ConfigError, match="truncation point"):
        parse_config({"physics": {"mean_density": 0.95}, "thinfilm": {"R_factor": 10.0}})


def test_fv_levels_must_double():
    with pytest.raises(ConfigError, match="fv_levels"):
        parse_config({"reynolds": {"fv_levels": [100, 200, 300]}})


def test_syntax_error_has_location(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[physics]\nmu = \n")
    with pytest.raises(ConfigError, match="line 2"):
        load_config(path)


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_config("/nonexistent/run.toml")


def test_derived_objects_share_data():
    cfg = parse_config({"physics": {"s": 2.0, "mean_density": 0.3}, "thinfilm": {"eps": 0.05}})
    rp, tp = cfg.reynolds_problem(), cfg.thinfilm_problem()
    assert rp.M == tp.mass and rp.s == tp.s == 2.0
    assert tp.eps == 0.05 and cfg.thinfilm_problem(0.2).eps == 0.2
    assert cfg.thinfilm_options().nx == cfg.grid.nx


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.9), st.floats(0.1, 5.0), st.floats(0.0, 3.0))
def test_round_trip_through_dict(md, mu, s):
    cfg = parse_config({"physics": {"mean_density": md, "mu": mu, "s": s}})
    again = parse_config(cfg.to_dict())
    assert again == cfg and again.config_hash == cfg.config_hash


def test_solver_report_round_trip(tmp_path):
    import numpy as np

    rep = SolverReport("reynolds solve", "abc", "0.1.0", results={"x": np.float64(1.5), "v": np.arange(3)},
                       wall_times={"t": 0.1}, artifacts=["a.csv"])
    path = rep.write(tmp_path / "r.json")
    back = SolverReport.from_json(path.read_text())
    assert back.results == {"v": [0, 1, 2], "x": 1.5}
    assert back.artifacts == ["a.csv"] and back.status == "ok"
    assert json.loads(path.read_text())["command"] == "reynolds solve"


def test_equivalent_mass_settings_share_hash():
    a = parse_config({"physics": {"mass": 0.4}})
    b = parse_config({"physics": {"mean_density": 0.4}})
    assert a.config_hash == b.config_hash == RunConfig().config_hash
