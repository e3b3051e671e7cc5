"""Compressible lubrication toolkit.

Singular hard-sphere pressure laws (:mod:`lubrix.eos`), periodic gap
geometry (:mod:`lubrix.domain`), the compressible Reynolds equation
(:mod:`lubrix.reynolds`), a thin-film compressible Navier-Stokes solver
(:mod:`lubrix.thinfilm`), divergence-free constructions and inequality
checks (:mod:`lubrix.divfree`) and the ``lubrix`` command line
(:mod:`lubrix.cli`).
"""

__version__ = "0.1.0"

from .domain import GapProfile, Grid1D, GridQ, build_grid_q, make_gap
from .eos import PressureLaw, RegularizedEOS, eval_p, g_prime, h_function, truncated_pressure
from .reynolds import ReynoldsProblem, ReynoldsSolution, fv_solve, solve_reynolds
from .thinfilm import ThinFilmOptions, ThinFilmProblem, epsilon_sweep, solve_thinfilm

__all__ = [
    "__version__",
    "GapProfile",
    "Grid1D",
    "GridQ",
    "build_grid_q",
    "make_gap",
    "PressureLaw",
    "RegularizedEOS",
    "eval_p",
    "g_prime",
    "h_function",
    "truncated_pressure",
    "ReynoldsProblem",
    "ReynoldsSolution",
    "fv_solve",
    "solve_reynolds",
    "ThinFilmOptions",
    "ThinFilmProblem",
    "epsilon_sweep",
    "solve_thinfilm",
]
