"""Thin-film solves over decreasing eps compared with the Reynolds limit.

Usage::

    python3 scripts/eps_sweep.py [--config configs/benchmark.toml] [--threads 3] [--json sweep.json]
"""
from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from lubrix.config import load_config
from lubrix.thinfilm import epsilon_sweep

ROOT = Path(__file__).resolve().parents[1]
COLUMNS = ("vertical_pressure_variation", "mean_pressure_l2_distance", "mean_pressure_rel_distance",
           "shear_l2_distance")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "benchmark.toml"))
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--json", default=None)
    args = ap.parse_args()

    cfg = load_config(args.config)
    eps_list = cfg.thinfilm.eps_list
    template = cfg.thinfilm_problem(eps_list[0])
    opts = cfg.thinfilm_options()
    print(f"config {cfg.config_hash}: grid {opts.nx}x{opts.nz}, delta_min {opts.delta_min:g}, eps {list(eps_list)}")
    t0 = time.perf_counter()
    rows = epsilon_sweep(template, eps_list, opts, threads=args.threads, reynolds_n=cfg.grid.n)
    wall = time.perf_counter() - t0

    print(f"\n{'eps':>6} " + " ".join(f"{c[:22]:>24}" for c in COLUMNS) + f" {'time':>7}")
    prev = None
    for row in rows:
        if row.status != "ok":
            print(f"{row.eps:>6g} failed: {row.error}")
            prev = None
            continue
        cells = []
        for c in COLUMNS:
            v = row.metrics[c]
            rate = f" ({prev[c] / v:4.2f}x)" if prev else " " * 8
            cells.append(f"{v:>16.4e}{rate}")
        print(f"{row.eps:>6g} " + " ".join(cells) + f" {row.wall_time_s:>6.1f}s")
        prev = row.metrics
    print(f"\ntotal {wall:.1f} s; factors in brackets are ratios to the previous eps")

    if args.json:
        Path(args.json).write_text(json.dumps({"config_hash": cfg.config_hash, "wall_time_s": wall,
                                               "rows": [r.to_dict() for r in rows]}, indent=2))


if __name__ == "__main__":
    main()
