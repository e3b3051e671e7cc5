"""Pressure laws, truncation, cut-off and the regularized primitives."""
from __future__ import annotations

import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lubrix.eos import (EOSDomainError, PressureLaw, RegularizedEOS, cutoff_T, eval_p, g_prime,
                        h_function, identity_residual, pressure_primitive_f, truncated_pressure)

mp.mp.dps = 30

LAWS = [
    PressureLaw("rational", 1.0, 1.0, 1.0, 1.0),
    PressureLaw("rational", 0.8, 2.0, 2.0, 0.5),
    PressureLaw("log", 1.0, 1.0, 1.0, 1.0),
    PressureLaw("log", 2.5, 0.3, 1.0, 3.0),
]


def mp_p(law: PressureLaw, r):
    r = mp.mpf(r)
    if law.family == "rational":
        return law.theta * law.a * r / (law.rho_bar - r) ** law.gamma
    return -law.theta * law.a * r * mp.log(1 - r / law.rho_bar)


def mp_dp(law, r):
    return mp.diff(lambda x: mp_p(law, x), mp.mpf(r))


# ----------------------------------------------------------------------------
# eval_p
# ----------------------------------------------------------------------------

def test_hard_sphere_values(law):
    assert eval_p(law, 0.0) == 0.0
    assert eval_p(law, 0.5) == pytest.approx(1.0, rel=1e-15)


@pytest.mark.parametrize("rho", [1.0, 1.2, -0.1])
def test_domain_error(law, rho):
    with pytest.raises(EOSDomainError):
        eval_p(law, rho)


@pytest.mark.parametrize("law", LAWS, ids=lambda l: f"{l.family}-{l.rho_bar}")
def test_p_and_dp_match_high_precision(law):
    for frac in (0.01, 0.3, 0.7, 0.95, 0.999):
        r = frac * law.rho_bar
        assert law.p(r) == pytest.approx(float(mp_p(law, r)), rel=1e-13)
        assert law.dp(r) == pytest.approx(float(mp_dp(law, r)), rel=1e-10)


@pytest.mark.parametrize("law", LAWS, ids=lambda l: f"{l.family}-{l.rho_bar}")
def test_pressure_blows_up_at_rho_bar(law):
    ks = np.arange(2, 48, 4)
    rho = law.rho_bar * (1 - 2.0**-ks)
    values = law.p(rho)
    assert np.all(np.diff(values) > 0)
    if law.family == "rational":
        assert values[-1] > 1e12
    else:
        # -log(1 - rho/rho_bar) = k log 2 exactly, so p grows without bound in k
        np.testing.assert_allclose(values, law.theta * law.a * rho * ks * math.log(2), rtol=1e-12)


@pytest.mark.parametrize("law", LAWS, ids=lambda l: f"{l.family}-{l.rho_bar}")
def test_monotone_on_sampled_pairs(law):
    rng = np.random.default_rng(1)
    pairs = np.sort(rng.uniform(0, law.rho_bar * (1 - 1e-9), size=(1000, 2)), axis=1)
    pairs = pairs[pairs[:, 0] < pairs[:, 1]]
    assert np.all(law.p(pairs[:, 0]) < law.p(pairs[:, 1]))


@pytest.mark.parametrize("law", LAWS, ids=lambda l: f"{l.family}-{l.rho_bar}")
def test_dp_matches_central_differences(law):
    r = np.linspace(0.05, 0.9, 40) * law.rho_bar
    e = 1e-6 * law.rho_bar
    fd = (law.p(r + e) - law.p(r - e)) / (2 * e)
    np.testing.assert_allclose(law.dp(r), fd, rtol=1e-6)


@given(st.floats(1e-9, 0.999))
def test_dp_positive(frac):
    for law in LAWS:
        r = frac * law.rho_bar
        assert law.dp(r) > 0


def test_invalid_laws():
    with pytest.raises(ValueError):
        PressureLaw("virial")
    with pytest.raises(ValueError):
        PressureLaw("rational", gamma=0.5)
    with pytest.raises(ValueError):
        PressureLaw("rational", rho_bar=0.0)


# ----------------------------------------------------------------------------
# cut-off and truncation
# ----------------------------------------------------------------------------

@pytest.mark.parametrize("rho, expected", [(-0.3, 0.0), (0.4, 0.4), (2.0, 1.0)])
def test_cutoff_values(rho, expected):
    assert cutoff_T(rho, 1.0) == expected


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_cutoff_is_one_lipschitz(a, b):
    assert abs(cutoff_T(a, 1.0) - cutoff_T(b, 1.0)) <= abs(a - b) + 1e-15


def test_truncated_pressure_examples(law):
    reg = RegularizedEOS(law, R=10.0, delta=0.1, rho_M=0.4)
    assert truncated_pressure(reg, 0.5) == pytest.approx(1.0, rel=1e-15)
    assert truncated_pressure(reg, 0.95) == pytest.approx(14.0, rel=1e-12)
    assert truncated_pressure(reg, 0.9) == pytest.approx(9.0, rel=1e-12)
    with pytest.raises(EOSDomainError):
        truncated_pressure(reg, -0.1)


@pytest.mark.parametrize("law", LAWS, ids=lambda l: f"{l.family}-{l.rho_bar}")
def test_truncation_exact_below_and_affine_beyond(law):
    reg = RegularizedEOS(law, R=20.0 / law.rho_bar, delta=0.5, rho_M=0.3 * law.rho_bar)
    below = np.linspace(0, reg.knot, 50)
    np.testing.assert_array_equal(reg.p_R(below), law.p(below))
    beyond = reg.knot + np.linspace(0, 3, 50) * law.rho_bar
    slope = law.dp(reg.knot)
    np.testing.assert_allclose(reg.p_R(beyond), law.p(reg.knot) + slope * (beyond - reg.knot), rtol=1e-14)
    assert np.all(np.diff(reg.p_R(np.linspace(0, 3 * law.rho_bar, 500))) > 0)


def test_regularized_invariants(law):
    with pytest.raises(ValueError):
        RegularizedEOS(law, R=0.5, delta=0.1, rho_M=0.4)       # R <= 1/rho_bar
    with pytest.raises(ValueError):
        RegularizedEOS(law, R=2.0, delta=0.1, rho_M=0.6)       # knot 0.5 below rho_M
    with pytest.raises(ValueError):
        RegularizedEOS(law, R=10.0, delta=0.0, rho_M=0.4)


# ----------------------------------------------------------------------------
# G' and H against an independent high-precision quadrature
# ----------------------------------------------------------------------------

def mp_kernel(reg: RegularizedEOS, y):
    law = reg.law
    y = mp.mpf(y)
    k = mp.mpf(reg.knot)
    dpr = mp_dp(law, y) if y <= k else mp_dp(law, k)
    return (dpr + mp.sqrt(reg.delta)) / min(y, mp.mpf(law.rho_bar))


def mp_g_prime(reg, r):
    pts = [reg.rho_M] + [b for b in (reg.knot, reg.law.rho_bar) if min(reg.rho_M, r) < b < max(reg.rho_M, r)]
    pts = sorted(pts + [r]) if r > reg.rho_M else sorted(pts + [r], reverse=True)
    if r < reg.rho_M:
        pts = [reg.rho_M] + [p for p in pts if p != reg.rho_M]
    return mp.quad(lambda y: mp_kernel(reg, y), pts)


@pytest.mark.parametrize("rho", [0.05, 0.4, 0.7, 0.93, 1.3])
def test_g_prime_against_mpmath(law, rho):
    reg = RegularizedEOS(law, R=20.0, delta=0.25, rho_M=0.4)
    assert g_prime(reg, rho) == pytest.approx(float(mp_g_prime(reg, rho)), rel=1e-10, abs=1e-12)


def test_g_prime_sign_and_zero(law):
    reg = RegularizedEOS(law, R=20.0, delta=0.25, rho_M=0.4)
    assert g_prime(reg, 0.4) == 0.0
    assert g_prime(reg, 0.4 + 1e-6) > 0
    assert g_prime(reg, 0.4 - 1e-6) < 0


@pytest.mark.parametrize("rho", [0.1, 0.6, 0.97, 1.5])
def test_h_fubini_matches_nested(law, rho):
    reg = RegularizedEOS(law, R=20.0, delta=0.25, rho_M=0.4)
    assert h_function(reg, rho, "fubini") == pytest.approx(h_function(reg, rho, "nested"), rel=1e-9, abs=1e-10)


@pytest.mark.parametrize("law", LAWS, ids=lambda l: f"{l.family}-{l.rho_bar}")
def test_identity_at_random_points(law):
    rng = np.random.default_rng(7)
    reg = RegularizedEOS(law, R=1e3 / law.rho_bar, delta=1e-3, rho_M=0.4 * law.rho_bar)
    rho = rng.uniform(0, law.rho_bar + 1, 60)
    # the terms reach p'(knot) ~ R^(gamma+1); compare against their size
    for r in rho:
        size = 1.0 + abs(reg.p_R(r)) + abs(g_prime(reg, r) * cutoff_T(r, law.rho_bar))
        assert abs(identity_residual(reg, r)) <= 1e-13 * size


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 2.0), st.floats(1e-4, 1.0))
def test_identity_property(rho, delta):
    law = PressureLaw()
    reg = RegularizedEOS(law, R=50.0, delta=delta, rho_M=0.4)
    assert abs(identity_residual(reg, rho)) < 1e-8


def test_g_prime_rejects_nonpositive(law):
    reg = RegularizedEOS(law, R=20.0, delta=0.25, rho_M=0.4)
    with pytest.raises(EOSDomainError):
        g_prime(reg, 0.0)


# ----------------------------------------------------------------------------
# primitive f
# ----------------------------------------------------------------------------

def test_primitive_frozen_value(law):
    # f(0.6) - f(0.5) = int_{0.5}^{0.6} s/(1-s)^2 ds = 0.5 + log(0.8)
    oracle = mp.quad(lambda s: s / (1 - s) ** 2, [0.5, 0.6])
    assert float(oracle) == pytest.approx(0.5 + math.log(0.8), rel=1e-15)
    assert pressure_primitive_f(law, 0.6, 0.5) == pytest.approx(0.27685644868579, rel=1e-12)
    assert pressure_primitive_f(law, 0.5, 0.5) == 0.0


@pytest.mark.parametrize("law", LAWS, ids=lambda l: f"{l.family}-{l.rho_bar}")
def test_primitive_against_mpmath(law):
    ref = 0.4 * law.rho_bar
    for frac in (0.05, 0.5, 0.9, 0.99):
        r = frac * law.rho_bar
        oracle = mp.quad(lambda s: s * mp_dp(law, s), [ref, r])
        assert pressure_primitive_f(law, r, ref) == pytest.approx(float(oracle), rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("law", LAWS, ids=lambda l: f"{l.family}-{l.rho_bar}")
def test_primitive_derivative(law):
    ref = 0.4 * law.rho_bar
    r = np.linspace(0.05, 0.9, 30) * law.rho_bar
    e = 1e-6 * law.rho_bar
    fd = (pressure_primitive_f(law, r + e, ref) - pressure_primitive_f(law, r - e, ref)) / (2 * e)
    target = r * law.dp(r)
    assert np.all(np.abs(fd - target) <= 1e-6 * (1 + target))


def test_primitive_increasing_and_domain(law):
    assert pressure_primitive_f(law, 0.6, 0.5) > pressure_primitive_f(law, 0.4, 0.5)
    with pytest.raises(EOSDomainError):
        pressure_primitive_f(law, 1.0, 0.5)
    with pytest.raises(EOSDomainError):
        pressure_primitive_f(law, 0.0, 0.5)
