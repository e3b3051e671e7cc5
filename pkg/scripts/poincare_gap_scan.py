"""Largest sampled Poincare ratio ||v|| / ||grad v|| as the maximal gap height grows.

For fields vanishing on the upper wall the one-dimensional bound in ``Z``
limits the ratio by ``2 h_max / pi``, so it can only exceed one once
``h_max`` exceeds ``pi / 2``.

Usage::

    python3 scripts/poincare_gap_scan.py [--samples 50]
"""
from __future__ import annotations

import argparse
import math

import numpy as np

from lubrix.divfree import inequality_check, random_admissible_field
from lubrix.domain import GapProfile, GridQ


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=50)
    ap.add_argument("--eps", type=float, default=0.1)
    args = ap.parse_args()

    print(f"{'h_max':>6} {'max ratio':>10} {'2 h_max / pi':>13} {'exceedances (seeds)':>22}")
    for h_max in np.arange(0.5, 3.01, 0.25):
        gap = GapProfile(0.75 * h_max, (0.25 * h_max,))
        grid = GridQ(gap, 32, 16, args.eps)
        ratios = [inequality_check("poincare", random_admissible_field("poincare", gap, seed), grid, args.eps).ratio
                  for seed in range(args.samples)]
        over = [seed for seed, r in enumerate(ratios) if r > 1.0]
        print(f"{h_max:>6.2f} {max(ratios):>10.4f} {2 * h_max / math.pi:>13.4f} {str(over[:6]):>22}")


if __name__ == "__main__":
    main()
