"""Shared problems and cached solutions for the test suite."""
from __future__ import annotations

import pytest

from lubrix.domain import GapProfile
from lubrix.eos import PressureLaw
from lubrix.reynolds import ReynoldsProblem, solve_reynolds

HARD_SPHERE = PressureLaw("rational", rho_bar=1.0, a=1.0, gamma=1.0, theta=1.0)
COSINE_GAP = GapProfile(1.0, (0.5,))


def cosine_problem(law: PressureLaw = HARD_SPHERE) -> ReynoldsProblem:
    """Benchmark: ``h = 1 + 0.5 cos(2 pi y)``, ``s = mu = 1``, mean density 0.4."""
    return ReynoldsProblem.from_mean_density(COSINE_GAP, 1.0, 1.0, 0.4, law)


@pytest.fixture(scope="session")
def law():
    return HARD_SPHERE


@pytest.fixture(scope="session")
def cosine():
    return cosine_problem()


@pytest.fixture(scope="session")
def cosine_solution(cosine):
    return solve_reynolds(cosine, n=1024)
