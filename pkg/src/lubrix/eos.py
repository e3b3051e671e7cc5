"""Singular (hard-sphere type) pressure laws and their regularizations.

A pressure law lives on ``[0, rho_bar)`` and blows up at the maximal
density ``rho_bar``.  For the approximation chain we also need the cut-off
``T``, the affinely truncated pressure ``p_R`` and the auxiliary functions
``G'_{R,delta}`` and ``H`` that appear in the renormalized continuity
equation.

The scalar helpers with a leading underscore evaluate the closed forms
without domain checks and accept complex input, which the thin-film
solver relies on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

__all__ = [
    "EOSDomainError",
    "QuadratureError",
    "PressureLaw",
    "RegularizedEOS",
    "eval_p",
    "cutoff_T",
    "truncated_pressure",
    "g_prime",
    "h_function",
    "pressure_primitive_f",
    "identity_residual",
]

FAMILIES = ("rational", "log")
RHO_FLOOR = 1e-12
QUAD_EPSABS = 1e-10
QUAD_EPSREL = 1e-12


class EOSDomainError(ValueError):
    """Density outside the admissible range of a pressure law."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""


@dataclass(frozen=True)
class PressureLaw:
    """Barotropic pressure law ``p = theta * Z(rho) * rho`` singular at ``rho_bar``.

    Families
    --------
    ``rational``  ``p = theta * a * rho / (rho_bar - rho)**gamma``, ``gamma >= 1``
    ``log``       ``p = -theta * a * rho * log(1 - rho / rho_bar)``
    """

    family: str = "rational"
    rho_bar: float = 1.0
    a: float = 1.0
    gamma: float = 1.0
    theta: float = 1.0

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown pressure family {self.family!r}; expected one of {FAMILIES}")
        if not self.rho_bar > 0:
            raise ValueError("rho_bar must be positive")
        if not (self.a > 0 and self.theta > 0):
            raise ValueError("a and theta must be positive")
        if self.family == "rational" and not self.gamma >= 1:
            raise ValueError("rational family requires gamma >= 1")

    @property
    def scale(self) -> float:
        return self.theta * self.a

    # -- unchecked closed forms (array / complex friendly) -----------------
    def _p(self, rho):
        rb = self.rho_bar
        if self.family == "rational":
            return self.scale * rho / (rb - rho) ** self.gamma
        return -self.scale * rho * np.log1p(-rho / rb)

    def _dp(self, rho):
        rb, g = self.rho_bar, self.gamma
        if self.family == "rational":
            return self.scale * (rb + (g - 1.0) * rho) / (rb - rho) ** (g + 1.0)
        x = rho / rb
        return self.scale * (-np.log1p(-x) + x / (1.0 - x))

    def _d2p(self, rho):
        rb, g = self.rho_bar, self.gamma
        if self.family == "rational":
            d = rb - rho
            return self.scale * ((g - 1.0) / d ** (g + 1.0) + (g + 1.0) * (rb + (g - 1.0) * rho) / d ** (g + 2.0))
        x = rho / rb
        return self.scale * (2.0 - x) / (rb * (1.0 - x) ** 2)

    def _rho_p_minus_primitive(self, rho):
        """``rho p(rho) - int_0^rho p``, an antiderivative of ``rho p'(rho)``."""
        rho = np.asarray(rho, dtype=float)
        rb = self.rho_bar
        if self.family == "rational":
            # int_0^r p = phi(rb) - phi(rb - r) with phi(t) = rb*I_g(t) - I_{g-1}(t)
            t = rb - rho
            return rho * self._p(rho) + self._phi(t) - self._phi(rb)
        x = rho / rb
        l1 = np.log1p(-x)
        prim = rb**2 * (-0.5 * (x**2 - 1.0) * l1 + 0.25 * x**2 + 0.5 * x)
        return rho * self._p(rho) - self.scale * prim

    def _phi(self, t):
        rb, g = self.rho_bar, self.gamma

        def power_primitive(k, t):
            # antiderivative of t**(-k)
            if abs(k - 1.0) < 1e-14:
                return np.log(t)
            return t ** (1.0 - k) / (1.0 - k)

        return self.scale * (rb * power_primitive(g, t) - power_primitive(g - 1.0, t))

    # -- checked public evaluators ------------------------------------------
    def check(self, rho, *, allow_zero: bool = True) -> np.ndarray:
        r = np.asarray(rho, dtype=float)
        lower_bad = (r < 0) if allow_zero else (r <= 0)
        if np.any(lower_bad) or np.any(r >= self.rho_bar) or np.any(~np.isfinite(r)):
            raise EOSDomainError(
                f"density outside [0, {self.rho_bar}) for the {self.family} law: {rho!r}"
            )
        return r

    def p(self, rho):
        r = self.check(rho)
        out = self._p(r)
        return float(out) if np.ndim(out) == 0 else out

    def dp(self, rho):
        r = self.check(rho)
        out = self._dp(r)
        return float(out) if np.ndim(out) == 0 else out

    def d2p(self, rho):
        r = self.check(rho)
        out = self._d2p(r)
        return float(out) if np.ndim(out) == 0 else out

    def primitive_f(self, rho, rho_ref: float):
        """``f(rho) = int_{rho_ref}^{rho} s p'(s) ds``."""
        r = self.check(rho, allow_zero=False)
        self.check(rho_ref, allow_zero=False)
        out = self._rho_p_minus_primitive(r) - self._rho_p_minus_primitive(rho_ref)
        return float(out) if np.ndim(out) == 0 else out

    def to_dict(self) -> dict:
        return {"family": self.family, "rho_bar": self.rho_bar, "a": self.a,
                "gamma": self.gamma, "theta": self.theta}


@dataclass(frozen=True)
class RegularizedEOS:
    """Truncation level ``R`` and artificial viscosity ``delta`` around a law."""

    law: PressureLaw
    R: float
    delta: float
    rho_M: float
    _knot: float = field(init=False, repr=False)

    def __post_init__(self) -> None:
        rb = self.law.rho_bar
        if not self.R > 1.0 / rb:
            raise ValueError(f"R must exceed 1/rho_bar = {1.0 / rb}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not 0 < self.rho_M < rb:
            raise ValueError("rho_M must lie in (0, rho_bar)")
        knot = rb - 1.0 / self.R
        if not knot > self.rho_M:
            raise ValueError(
                f"truncation point rho_bar - 1/R = {knot} must exceed rho_M = {self.rho_M}"
            )
        object.__setattr__(self, "_knot", knot)

    @property
    def knot(self) -> float:
        return self._knot

    @property
    def sqrt_delta(self) -> float:
        return math.sqrt(self.delta)

    def with_delta(self, delta: float) -> "RegularizedEOS":
        return RegularizedEOS(self.law, self.R, delta, self.rho_M)

    # unchecked, vectorized, complex friendly
    def _p_R(self, rho):
        k = self._knot
        below = np.real(rho) <= k
        inner = np.where(below, rho, k)
        return np.where(below, self.law._p(inner), self.law._dp(k) * (rho - k) + self.law._p(k))

    def _dp_R(self, rho):
        k = self._knot
        below = np.real(rho) <= k
        inner = np.where(below, rho, k)
        return np.where(below, self.law._dp(inner), self.law._dp(k))

    def p_R(self, rho):
        r = np.asarray(rho, dtype=float)
        if np.any(r < 0):
            raise EOSDomainError(f"truncated pressure needs rho >= 0, got {rho!r}")
        out = self._p_R(r)
        return float(out) if np.ndim(out) == 0 else out

    def dp_R(self, rho):
        r = np.asarray(rho, dtype=float)
        if np.any(r < 0):
            raise EOSDomainError(f"truncated pressure needs rho >= 0, got {rho!r}")
        out = self._dp_R(r)
        return float(out) if np.ndim(out) == 0 else out

    def augmented_pressure(self, rho):
        """``p_R(rho) + sqrt(delta) * rho`` (unchecked)."""
        return self._p_R(rho) + self.sqrt_delta * rho

    def _kernel(self, y: float) -> float:
        # (p_R'(y) + sqrt(delta)) / T(y)
        return (float(self._dp_R(y)) + self.sqrt_delta) / min(y, self.law.rho_bar)

    def _breakpoints(self, lo: float, hi: float) -> list[float]:
        return [b for b in (self._knot, self.law.rho_bar) if lo < b < hi]


def eval_p(law: PressureLaw, rho):
    """Pressure ``p(rho)``; raises :class:`EOSDomainError` outside ``[0, rho_bar)``."""
    return law.p(rho)


def cutoff_T(rho, rho_bar: float):
    """Clamp of the density to ``[0, rho_bar]``."""
    out = np.clip(np.asarray(rho, dtype=float), 0.0, rho_bar)
    return float(out) if np.ndim(out) == 0 else out


def _cutoff_T_any(rho, rho_bar: float):
    # complex-safe clamp, branch decided on the real part
    re = np.real(rho)
    return np.where(re <= 0.0, 0.0 * rho, np.where(re >= rho_bar, rho_bar + 0.0 * rho, rho))


def truncated_pressure(reg: RegularizedEOS, rho):
    return reg.p_R(rho)


def _quad(fun, lo: float, hi: float, points, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL) -> float:
    """Oriented adaptive quadrature that raises instead of warning."""
    if lo == hi:
        return 0.0
    sign = 1.0
    if hi < lo:
        lo, hi, sign = hi, lo, -1.0
    pts = [p for p in points if lo < p < hi] or None
    out = integrate.quad(fun, lo, hi, points=pts, epsabs=epsabs, epsrel=epsrel,
                         limit=200, full_output=True)
    val, err = out[0], out[1]
    # quad appends a diagnostic message only when something went wrong
    if len(out) > 3 and err > 10 * max(epsabs, epsrel * abs(val)):
        raise QuadratureError(f"quadrature on [{lo}, {hi}] failed: {out[3]} (err {err:.3e})")
    return sign * val


def _check_positive(rho: float) -> float:
    rho = float(rho)
    if not rho > 0:
        raise EOSDomainError(f"G'/H need rho > 0, got {rho}")
    if rho < RHO_FLOOR:
        raise EOSDomainError(f"rho = {rho} lies below the quadrature floor {RHO_FLOOR}")
    return rho


def g_prime(reg: RegularizedEOS, rho: float) -> float:
    """``G'_{R,delta}(rho) = int_{rho_M}^{rho} (p_R'(y) + sqrt(delta)) / T(y) dy``."""
    rho = _check_positive(rho)
    lo, hi = reg.rho_M, rho
    return _quad(reg._kernel, lo, hi, reg._breakpoints(min(lo, hi), max(lo, hi)))


def h_function(reg: RegularizedEOS, rho: float, method: str = "fubini") -> float:
    """``H(rho) = -p_R(rho_M) - sqrt(delta) rho_M + int_{rho_M}^{rho} G'(y) T'(y) dy``.

    ``T'`` is 1 on ``(0, rho_bar)`` and 0 beyond, so the integral stops at
    ``min(rho, rho_bar)``.  With ``method="fubini"`` the repeated integral is
    evaluated as the single integral ``int k(t) (b - t) dt`` (Cauchy's formula
    for repeated integration); ``method="nested"`` integrates the inner
    quadrature pointwise.
    """
    rho = _check_positive(rho)
    b = min(rho, reg.law.rho_bar)
    base = -float(reg._p_R(reg.rho_M)) - reg.sqrt_delta * reg.rho_M
    lo = reg.rho_M
    pts = reg._breakpoints(min(lo, b), max(lo, b))
    if method == "fubini":
        integral = _quad(lambda t: reg._kernel(t) * (b - t), lo, b, pts)
    elif method == "nested":
        integral = _quad(lambda y: g_prime(reg, y), lo, b, pts)
    else:
        raise ValueError(f"unknown method {method!r}")
    return base + integral


def identity_residual(reg: RegularizedEOS, rho: float) -> float:
    """``G'(rho) T(rho) - H(rho) - p_R(rho) - sqrt(delta) rho`` (zero in exact arithmetic)."""
    gp = g_prime(reg, rho)
    t = cutoff_T(rho, reg.law.rho_bar)
    return gp * t - h_function(reg, rho) - float(reg._p_R(rho)) - reg.sqrt_delta * rho


def pressure_primitive_f(law: PressureLaw, rho, rho_ref: float):
    """``f(rho) = int_{rho_ref}^{rho} s p'(s) ds`` so that ``d f(rho)/dy = rho d p(rho)/dy``."""
    return law.primitive_f(rho, rho_ref)
