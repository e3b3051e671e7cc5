"""Reynolds limit on the configured gap: shooting solve, finite-volume study, uniqueness probe.

Usage::

    python3 scripts/reynolds_benchmark.py [--config configs/benchmark.toml] [--json out.json]
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from lubrix.config import load_config
from lubrix.reynolds import fourier_interpolate, fv_solve, oracle_compare, solve_reynolds

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "benchmark.toml"))
    ap.add_argument("--json", default=None, help="write the collected numbers here")
    args = ap.parse_args()

    cfg = load_config(args.config)
    prob = cfg.reynolds_problem()
    sol = solve_reynolds(prob, n=cfg.grid.n, options=cfg.shooting_options())
    print(f"config {cfg.config_hash}: mass {prob.M:.6g}, s {prob.s:g}, mu {prob.mu:g}")
    print(f"shooting  lambda_flux = {sol.lambda_flux:.12f}  rho in [{sol.rho.min():.6f}, {sol.rho.max():.6f}]  "
          f"({sol.wall_time_s:.2f} s)")
    print(f"          residuals {sol.residuals}")

    res = oracle_compare(prob, cfg.reynolds.fv_levels, cfg.grid.n, cfg.shooting_options(), cfg.fv_options(),
                         reference=sol)
    print("\nfinite volumes against shooting")
    print(f"{'n':>6} {'max|rho_fv - rho|':>20} {'|lambda_fv - lambda|':>22}")
    for n, e, le in zip(res["levels"], res["linf_vs_shooting"], res["lambda_error"]):
        print(f"{n:>6} {e:>20.3e} {le:>22.3e}")
    print(f"observed self-convergence order {res['observed_order']:.4f}")

    # first-order upwind faces for comparison
    print("\nupwind face densities (first order)")
    for n in cfg.reynolds.fv_levels:
        up = fv_solve(prob, n, cfg.fv_options().__class__(face_density="upwind"))
        err = np.max(np.abs(up.rho - fourier_interpolate(sol.rho, up.y)))
        print(f"{n:>6} {err:>20.3e}")

    guesses = [dict(lambda_guess=0.3 * prob.lambda_min), dict(lambda_guess=0.9 * prob.lambda_min),
               dict(rho0_guess=0.05 * prob.law.rho_bar), dict(rho0_guess=0.95 * prob.law.rho_bar)]
    spread = max(float(np.max(np.abs(solve_reynolds(prob, n=cfg.grid.n, **g).rho - sol.rho))) for g in guesses)
    print(f"\nuniqueness probe: max density spread over {len(guesses) + 1} initializations {spread:.2e}")

    if args.json:
        out = {"config_hash": cfg.config_hash, "solution": sol.to_dict(), "oracle": res,
               "uniqueness_spread": spread}
        Path(args.json).write_text(json.dumps(out, indent=2, default=float))


if __name__ == "__main__":
    main()
