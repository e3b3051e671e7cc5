"""Command line driver: ``lubrix <group> <command> --config FILE``.

Commands
--------
``reynolds solve``            density, pressure and flux of the limit problem
``reynolds oracle-compare``   shooting against finite volumes on doubled grids
``thinfilm solve``            one thin-film solve at ``thinfilm.eps``
``thinfilm sweep``            thin-film solves over ``thinfilm.eps_list``
``check inequalities``        functional-inequality ratios on random fields
``eos identities``            algebraic identity of the regularized pressure

Exit codes: 0 success, 2 solver failure, 3 invalid configuration.  Every
failure prints a one-line JSON object on stderr and, when an output
directory is known, writes it into the command's JSON artifact.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, SolverReport, load_config
from .divfree import inequality_check, random_admissible_field
from .domain import GridQ
from .eos import FAMILIES, PressureLaw, RegularizedEOS, identity_residual
from .reynolds import fv_solve, oracle_compare, solve_reynolds
from .thinfilm import epsilon_sweep, pressure_field, solve_thinfilm

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_SOLVER", "EXIT_CONFIG"]

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3

log = logging.getLogger("lubrix")

#: pass thresholds for the inequality ratios
INEQUALITY_LIMITS = {"poincare": 1.0, "anisotropic": 1.0 + 1e-8, "korn": 1.0}
IDENTITY_TOL = 1e-8


# ----------------------------------------------------------------------------
# output helpers
# ----------------------------------------------------------------------------

def fmt(x) -> str:
    """Full double precision, ``'.'`` decimal separator."""
    return format(float(x), ".17g")


def write_csv(path: Path, header: Sequence[str], columns: Iterable[np.ndarray], config_hash: str) -> Path:
    cols = [np.ravel(np.asarray(c, dtype=float)) for c in columns]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(list(header) + ["config_hash"])
        for row in zip(*cols):
            w.writerow([fmt(v) for v in row] + [config_hash])
    return path


def eps_tag(eps: float) -> str:
    return format(eps, "g")


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------

def cmd_reynolds_solve(cfg: RunConfig, out: Path, args) -> SolverReport:
    prob = cfg.reynolds_problem()
    if cfg.reynolds.solver == "fv":
        sol = fv_solve(prob, cfg.grid.n, cfg.fv_options())
    else:
        sol = solve_reynolds(prob, n=cfg.grid.n, options=cfg.shooting_options())
    csv_path = write_csv(out / "reynolds.csv", ["y", "rho", "p", "dpdy", "q", "rho_q"],
                         [sol.y, sol.rho, sol.p, sol.dpdy, sol.q, sol.rho_q], cfg.config_hash)
    res = sol.to_dict()
    res["diagnostics"] = _jsonable(res["diagnostics"])
    return _report("reynolds solve", cfg, {"reynolds": res}, {"reynolds": sol.wall_time_s}, [csv_path.name],
                   out / "reynolds.json")


def cmd_reynolds_oracle(cfg: RunConfig, out: Path, args) -> SolverReport:
    prob = cfg.reynolds_problem()
    res = oracle_compare(prob, cfg.reynolds.fv_levels, cfg.grid.n, cfg.shooting_options(), cfg.fv_options())
    return _report("reynolds oracle-compare", cfg, {"oracle": res}, {"total": res["wall_time_s"]}, [],
                   out / "oracle.json")


def _thinfilm_csv(state, prob, cfg: RunConfig, out: Path) -> Path:
    grid = state.grid
    u, V = state.cell_velocity()
    p = pressure_field(state, prob, cfg.thinfilm.R_factor)
    Y = np.repeat(grid.y_c, grid.nz)
    ZETA = np.tile(grid.zeta_c, grid.nx)
    return write_csv(out / f"thinfilm_eps{eps_tag(prob.eps)}.csv", ["y", "zeta", "rho", "uh", "V", "p"],
                     [Y, ZETA, state.rho, u, V, p], cfg.config_hash)


def cmd_thinfilm_solve(cfg: RunConfig, out: Path, args) -> SolverReport:
    prob = cfg.thinfilm_problem()
    t0 = time.perf_counter()
    state, report = solve_thinfilm(prob, cfg.thinfilm_options())
    wall = time.perf_counter() - t0
    csv_path = _thinfilm_csv(state, prob, cfg, out)
    stages = [st for st in state.stages if "residual" in st]
    drift = float(np.max(np.abs(np.asarray(state.mass_history) - prob.mass))) if state.mass_history else 0.0
    res = {"eps": prob.eps, "estimates": report.to_dict(), "stages": stages, "max_mass_drift": drift}
    return _report("thinfilm solve", cfg, {"thinfilm": res}, {"thinfilm": wall}, [csv_path.name],
                   out / "thinfilm.json")


def cmd_thinfilm_sweep(cfg: RunConfig, out: Path, args) -> SolverReport:
    template = cfg.thinfilm_problem(cfg.thinfilm.eps_list[0])
    t0 = time.perf_counter()
    rows = epsilon_sweep(template, cfg.thinfilm.eps_list, cfg.thinfilm_options(), threads=args.threads,
                         reynolds_n=cfg.grid.n)
    wall = time.perf_counter() - t0
    artifacts = []
    for row in rows:
        if row.status == "ok":
            artifacts.append(_thinfilm_csv(row.state, replace(template, eps=row.eps), cfg, out).name)
    table = [row.to_dict() for row in rows]
    ok = [r for r in rows if r.status == "ok"]
    trends = {}
    if len(ok) == len(rows) and len(rows) > 1:
        for key in ("vertical_pressure_variation", "mean_pressure_l2_distance", "shear_l2_distance"):
            vals = [r.metrics[key] for r in rows]
            trends[key] = {"values": vals, "strictly_decreasing": all(b < a for a, b in zip(vals, vals[1:]))}
    rep = _report("thinfilm sweep", cfg, {"sweep": table, "trends": trends},
                  {"sweep": wall, **{eps_tag(r.eps): r.wall_time_s for r in rows}}, artifacts, None)
    failed = [r.eps for r in rows if r.status != "ok"]
    if failed:
        rep.status = "failed"
        rep.error = {"type": "SweepFailure", "message": f"thin-film solve failed for eps in {failed}"}
    rep.write(out / "sweep.json")
    if failed:
        raise _Reported(rep)
    return rep


def cmd_check_inequalities(cfg: RunConfig, out: Path, args) -> SolverReport:
    gap = cfg.gap_profile()
    grid = GridQ(gap, cfg.grid.nx, cfg.grid.nz, cfg.thinfilm.eps)
    samples = args.samples if args.samples is not None else cfg.checks.samples
    seed0 = args.seed if args.seed is not None else cfg.checks.seed
    summary = {}
    t0 = time.perf_counter()
    for kind, limit in INEQUALITY_LIMITS.items():
        ratios, exceed = [], []
        eps = cfg.thinfilm.eps if kind != "anisotropic" else 1.0
        for i in range(samples):
            seed = seed0 + i
            rep = inequality_check(kind, random_admissible_field(kind, gap, seed), grid, eps,
                                   mu=cfg.physics.mu, lambda_visc=cfg.physics.lambda_visc)
            ratios.append(rep.ratio)
            if rep.ratio > limit:
                exceed.append({"seed": seed, "ratio": rep.ratio})
        summary[kind] = {"samples": samples, "limit": limit, "max_ratio": max(ratios),
                         "mean_ratio": float(np.mean(ratios)), "min_ratio": min(ratios),
                         "constant": rep.constant, "exceedances": exceed, "h_max": gap.h_max}
    return _report("check inequalities", cfg, {"inequalities": summary, "first_seed": seed0},
                   {"checks": time.perf_counter() - t0}, [], out / "checks.json")


def cmd_eos_identities(cfg: RunConfig, out: Path, args) -> SolverReport:
    e, c = cfg.eos, cfg.checks
    seed = args.seed if args.seed is not None else c.seed
    rng = np.random.default_rng(seed)
    results = {}
    t0 = time.perf_counter()
    for family in FAMILIES:
        law = PressureLaw(family, e.rho_bar, e.a, e.gamma if family == "rational" else 1.0, e.theta)
        reg = RegularizedEOS(law, c.identity_R_factor / law.rho_bar, c.identity_delta, cfg.mean_density)
        rho = rng.uniform(0.0, law.rho_bar + 1.0, c.identity_samples)
        rho = rho[rho > 0]
        res = np.array([abs(identity_residual(reg, r)) for r in rho])
        worst = int(np.argmax(res))
        results[family] = {"samples": int(rho.size), "max_residual": float(res[worst]),
                           "worst_rho": float(rho[worst]), "R": reg.R, "delta": reg.delta, "rho_M": reg.rho_M}
    max_res = max(r["max_residual"] for r in results.values())
    payload = {"identities": results, "max_residual": max_res, "tolerance": IDENTITY_TOL,
               "within_tolerance": max_res < IDENTITY_TOL}
    rep = _report("eos identities", cfg, payload, {"identities": time.perf_counter() - t0}, [], None)
    if max_res >= IDENTITY_TOL:
        rep.status = "failed"
        rep.error = {"type": "IdentityViolation", "message": f"max residual {max_res:.3e} >= {IDENTITY_TOL}"}
    rep.write(out / "eos.json")
    if max_res >= IDENTITY_TOL:
        raise _Reported(rep)
    return rep


COMMANDS: dict[tuple[str, str], Callable] = {
    ("reynolds", "solve"): cmd_reynolds_solve,
    ("reynolds", "oracle-compare"): cmd_reynolds_oracle,
    ("thinfilm", "solve"): cmd_thinfilm_solve,
    ("thinfilm", "sweep"): cmd_thinfilm_sweep,
    ("check", "inequalities"): cmd_check_inequalities,
    ("eos", "identities"): cmd_eos_identities,
}

ARTIFACT = {
    ("reynolds", "solve"): "reynolds.json",
    ("reynolds", "oracle-compare"): "oracle.json",
    ("thinfilm", "solve"): "thinfilm.json",
    ("thinfilm", "sweep"): "sweep.json",
    ("check", "inequalities"): "checks.json",
    ("eos", "identities"): "eos.json",
}


class _Reported(Exception):
    """Failure whose report has already been written."""

    def __init__(self, report: SolverReport):
        super().__init__(report.error["message"] if report.error else "failed")
        self.report = report


def _report(command, cfg, results, wall, artifacts, path: Optional[Path]) -> SolverReport:
    rep = SolverReport(command=command, config_hash=cfg.config_hash, version=__version__,
                       results={"config": cfg.physics_dict(), **_jsonable(results)},
                       wall_times=wall, artifacts=list(artifacts))
    if path is not None:
        rep.write(path)
    return rep


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if callable(obj):
        return None
    return obj


# ----------------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML configuration file")
    common.add_argument("--out-dir", default=None, help="output directory (default: output.dir of the config)")
    common.add_argument("--seed", type=int, default=None, help="base seed for sampled checks")
    common.add_argument("--threads", type=int, default=1, help="worker threads for the epsilon sweep")

    parser = argparse.ArgumentParser(prog="lubrix", description="Compressible lubrication toolkit.")
    parser.add_argument("--version", action="version", version=f"lubrix {__version__}")
    groups = parser.add_subparsers(dest="group", required=True)
    for group, names in (("reynolds", ("solve", "oracle-compare")), ("thinfilm", ("solve", "sweep")),
                         ("check", ("inequalities",)), ("eos", ("identities",))):
        gp = groups.add_parser(group).add_subparsers(dest="command", required=True)
        for name in names:
            sp = gp.add_parser(name, parents=[common])
            if (group, name) == ("check", "inequalities"):
                sp.add_argument("--samples", type=int, default=None, help="random fields per inequality")
    return parser


def _fail(code: int, kind: str, message: str, details: Optional[dict] = None,
          cfg: Optional[RunConfig] = None, command: str = "", path: Optional[Path] = None) -> int:
    err = {"status": "failed", "exit_code": code, "error": {"type": kind, "message": message}}
    if details:
        err["error"].update(details)
    print(json.dumps(err), file=sys.stderr)
    if cfg is not None and path is not None:
        rep = SolverReport(command=command, config_hash=cfg.config_hash, version=__version__,
                           status="failed", results={"config": cfg.physics_dict()}, error=err["error"])
        rep.write(path)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=os.environ.get("LUBRIX_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    key = (args.group, args.command)
    command = " ".join(key)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "ConfigError", str(exc), {"violations": exc.errors})
    except OSError as exc:
        return _fail(EXIT_CONFIG, type(exc).__name__, str(exc))
    if getattr(args, "samples", None) is not None and args.samples < 1:
        return _fail(EXIT_CONFIG, "ConfigError", "--samples must be >= 1")
    if args.threads < 1:
        return _fail(EXIT_CONFIG, "ConfigError", "--threads must be >= 1")
    out = Path(args.out_dir if args.out_dir is not None else cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    log.info("running %s with config %s", command, cfg.config_hash)
    try:
        rep = COMMANDS[key](cfg, out, args)
    except _Reported as exc:
        err = {"status": "failed", "exit_code": EXIT_SOLVER, "error": exc.report.error,
               "artifact": str(out / ARTIFACT[key])}
        print(json.dumps(err), file=sys.stderr)
        return EXIT_SOLVER
    except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_SOLVER, type(exc).__name__, str(exc), cfg=cfg, command=command,
                     path=out / ARTIFACT[key])
    print(json.dumps({"status": rep.status, "command": command, "config_hash": rep.config_hash,
                      "artifacts": [str(out / a) for a in rep.artifacts + [ARTIFACT[key]]]}))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
