"""Discrete divergence solver, solenoidal boundary extensions and inequality checks.

Vector fields live on the staggered faces of :class:`lubrix.domain.GridQ`
(see :class:`FaceField`).  The divergence used throughout is the
finite-volume divergence of :class:`lubrix.discretization.SigmaOperators`,
so "divergence free" below means zero net flux out of every cell.
"""
from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .discretization import SigmaOperators
from .domain import GapProfile, GridQ

__all__ = [
    "FaceField",
    "DivergenceProblem",
    "ExtensionSpec",
    "ExtensionField",
    "SingularSystemError",
    "HypothesisViolation",
    "psi",
    "psi_lq_integral",
    "bogovskii_solve",
    "simple_extension",
    "corrected_extension",
    "extension_on_grid",
    "SmoothField",
    "random_admissible_field",
    "InequalityReport",
    "inequality_check",
]


class SingularSystemError(RuntimeError):
    """The saddle-point system could not be factorized."""


class HypothesisViolation(ValueError):
    """A field does not satisfy the trace hypotheses of an inequality."""


# ----------------------------------------------------------------------------
# cut-off profile
# ----------------------------------------------------------------------------

#: ``psi(t) = (1 - t)^3 (1 + 3 t) = 1 - 6 t^2 + 8 t^3 - 3 t^4`` on ``[0, 1]``
PSI_COEF = np.array([1.0, 0.0, -6.0, 8.0, -3.0])
PSI_INT_COEF = P.polyint(PSI_COEF)


def psi(t):
    """C^2 bump with ``psi(0) = 1``, ``psi = 0`` for ``t >= 1``."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return P.polyval(t, PSI_COEF)


def dpsi(t):
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return P.polyval(t, P.polyder(PSI_COEF))


def psi_primitive(t):
    """``int_0^t psi``; constant (``2/5``) for ``t >= 1``."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return P.polyval(t, PSI_INT_COEF)


def psi_lq_integral(q: int) -> float:
    """Exact ``int_0^1 psi^q`` for integer ``q`` (rational arithmetic, no cancellation)."""
    c = [1]
    for _ in range(q):
        c = np.convolve(c, PSI_COEF.astype(np.int64)).tolist()
    return float(sum(Fraction(int(ck), k + 1) for k, ck in enumerate(c)))


# ----------------------------------------------------------------------------
# face fields
# ----------------------------------------------------------------------------

@dataclass
class FaceField:
    """Vector field ``(u, W)`` on the staggered faces with wall data.

    ``u`` has shape ``(nx, nz)`` (vertical faces), ``W`` shape ``(nx, nz-1)``
    (interior horizontal faces).  ``bottom``/``top`` are the tangential wall
    values of ``u`` at the face positions ``y_f``; the normal component is
    zero on both walls.
    """

    grid: GridQ
    u: np.ndarray
    W: np.ndarray
    bottom: np.ndarray
    top: np.ndarray

    @classmethod
    def zeros(cls, grid: GridQ) -> "FaceField":
        return cls(grid, np.zeros((grid.nx, grid.nz)), np.zeros((grid.nx, grid.nz - 1)),
                   np.zeros(grid.nx), np.zeros(grid.nx))

    def u_ext(self) -> np.ndarray:
        out = np.empty((self.grid.nx, self.grid.nz + 2))
        out[:, 0], out[:, -1], out[:, 1:-1] = self.bottom, self.top, self.u
        return out

    def W_ext(self) -> np.ndarray:
        out = np.zeros((self.grid.nx, self.grid.nz + 1))
        out[:, 1:-1] = self.W
        return out

    def divergence(self, ops: Optional[SigmaOperators] = None) -> np.ndarray:
        ops = ops or SigmaOperators(self.grid)
        return ops.divergence(self.u.ravel(), self.W.ravel()).reshape(self.grid.nx, self.grid.nz)

    def __sub__(self, other: "FaceField") -> "FaceField":
        return FaceField(self.grid, self.u - other.u, self.W - other.W,
                         self.bottom - other.bottom, self.top - other.top)

    def __add__(self, other: "FaceField") -> "FaceField":
        return FaceField(self.grid, self.u + other.u, self.W + other.W,
                         self.bottom + other.bottom, self.top + other.top)

    def __mul__(self, c: float) -> "FaceField":
        return FaceField(self.grid, c * self.u, c * self.W, c * self.bottom, c * self.top)

    __rmul__ = __mul__

    def lq_norm(self, q: float) -> float:
        """Discrete ``L^q(Q)`` norm of the vector field (node volumes ``h dy dzeta``)."""
        g = self.grid
        vol_u = np.repeat(g.h_f, g.nz).reshape(g.nx, g.nz) * g.dy * g.dz
        vol_w = np.repeat(g.h_c, g.nz - 1).reshape(g.nx, g.nz - 1) * g.dy * g.dz
        s = np.sum(np.abs(self.u) ** q * vol_u) + np.sum(np.abs(self.W) ** q * vol_w)
        return float(s ** (1.0 / q))

    def h1_seminorm(self, ops: Optional[SigmaOperators] = None) -> float:
        ops = ops or SigmaOperators(self.grid)
        g = self.grid
        gyu, gzu, _ = ops.grad_lap_u(1.0)
        gyw, gzw, _ = ops.grad_lap_w(1.0)
        ue, we = self.u_ext().ravel(), self.W_ext().ravel()
        vol_u = np.repeat(g.h_f, g.nz) * g.dy * g.dz
        vol_w = np.repeat(g.h_c, g.nz - 1) * g.dy * g.dz
        s = (np.sum(((gyu @ ue) ** 2 + (gzu @ ue) ** 2) * vol_u)
             + np.sum(((gyw @ we) ** 2 + (gzw @ we) ** 2) * vol_w))
        return float(math.sqrt(s))


# ----------------------------------------------------------------------------
# Bogovskii-type solver
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class DivergenceProblem:
    """Find ``B`` with ``div B = f - mean(f)`` and ``B = 0`` on both walls."""

    grid: GridQ
    f: np.ndarray

    def centred_rhs(self) -> np.ndarray:
        f = np.broadcast_to(np.asarray(self.f, dtype=float), (self.grid.nx, self.grid.nz))
        vol = self.grid.vol
        return f - np.sum(f * vol) / np.sum(vol)


class _SaddleCache:
    """Factorized saddle-point matrix per grid (grids are immutable)."""

    def __init__(self, grid: GridQ):
        ops = SigmaOperators(grid)
        self.ops = ops
        g = grid
        gyu, gzu, _ = ops.grad_lap_u(1.0)
        gyw, gzw, _ = ops.grad_lap_w(1.0)
        vol_u = sparse.diags(np.repeat(g.h_f, g.nz) * g.dy * g.dz)
        vol_w = sparse.diags(np.repeat(g.h_c, g.nz - 1) * g.dy * g.dz)
        Gu = [gyu @ ops.ext_u, gzu @ ops.ext_u]
        Gw = [gyw @ ops.ext_w, gzw @ ops.ext_w]
        Ku = sum(G.T @ vol_u @ G for G in Gu)
        Kw = sum(G.T @ vol_w @ G for G in Gw)
        K = sparse.block_diag([Ku, Kw], format="csr")
        # divergence operator times volume: net outflow per cell
        Dh = ops.div_h @ sparse.diags(ops.hflux_u) + ops.div_s @ ops.sflux_u_w
        Ds = ops.div_s * ops.dy
        D = sparse.hstack([Dh, Ds], format="csr")
        vol = ops.vol
        n_v, n_c = K.shape[0], D.shape[0]
        A = sparse.bmat([[K, D.T, None],
                         [D, None, sparse.csr_matrix(vol[:, None])],
                         [None, sparse.csr_matrix(vol[None, :]), None]], format="csc")
        try:
            self.solve = splinalg.factorized(A)
        except RuntimeError as exc:  # pragma: no cover - degenerate grids only
            raise SingularSystemError(str(exc)) from exc
        self.n_v, self.n_c, self.n_u = n_v, n_c, ops.n_u
        self.vol = vol


_CACHE: dict[int, tuple[GridQ, _SaddleCache]] = {}


def _saddle(grid: GridQ) -> _SaddleCache:
    key = id(grid)
    hit = _CACHE.get(key)
    if hit is None or hit[0] is not grid:
        hit = (grid, _SaddleCache(grid))
        if len(_CACHE) > 16:
            _CACHE.clear()
        _CACHE[key] = hit
    return hit[1]


def bogovskii_solve(prob: DivergenceProblem) -> FaceField:
    """Minimum-gradient solution of ``div B = f - mean f`` with ``B = 0`` on the walls.

    The constrained quadratic problem is solved through its saddle-point
    system; the one-dimensional left kernel of the divergence (constants)
    is handled by an extra multiplier that fixes the mean of the pressure.

    Raises
    ------
    SingularSystemError
        If the saddle-point matrix is singular.
    """
    grid = prob.grid
    sp = _saddle(grid)
    rhs_c = prob.centred_rhs().ravel() * sp.vol
    rhs = np.concatenate([np.zeros(sp.n_v), rhs_c, [0.0]])
    x = sp.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("saddle-point solve produced non-finite values")
    u = x[:sp.n_u].reshape(grid.nx, grid.nz)
    W = x[sp.n_u:sp.n_v].reshape(grid.nx, grid.nz - 1)
    return FaceField(grid, u, W, np.zeros(grid.nx), np.zeros(grid.nx))


# ----------------------------------------------------------------------------
# extensions
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ExtensionSpec:
    """Tangential wall data ``g(y)`` at ``Z = 0`` spread over a layer of width ``eta``."""

    g: Union[float, Callable[[np.ndarray], np.ndarray]]
    eta: float
    q: float = 4.0

    def g_values(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if callable(self.g):
            return np.asarray(self.g(y), dtype=float) * np.ones_like(y)
        return np.full_like(y, float(self.g))

    @property
    def is_constant(self) -> bool:
        return not callable(self.g)


@dataclass
class ExtensionField:
    """Discrete solenoidal extension plus its analytic profile (when available)."""

    spec: ExtensionSpec
    field: FaceField
    correction: Optional[FaceField] = None

    def evaluate(self, y, Z) -> tuple[np.ndarray, np.ndarray]:
        """Analytic ``(g(y) psi(Z/eta), 0)`` of the uncorrected profile."""
        y, Z = np.broadcast_arrays(np.asarray(y, float), np.asarray(Z, float))
        return self.spec.g_values(y) * psi(Z / self.spec.eta), np.zeros_like(Z)

    def lq_norm_exact(self) -> float:
        """``s (eta int_0^1 psi^q)^(1/q)`` for constant data."""
        if not self.spec.is_constant:
            raise ValueError("closed form available for constant data only")
        q = self.spec.q
        return abs(float(self.spec.g)) * (self.spec.eta * psi_lq_integral(int(q))) ** (1.0 / q)

    def lq_norm(self, q: Optional[float] = None) -> float:
        return self.field.lq_norm(q or self.spec.q)

    def trace_error(self) -> float:
        g = self.field.grid
        err_b = np.max(np.abs(self.field.bottom - self.spec.g_values(g.y_f)))
        return float(max(err_b, np.max(np.abs(self.field.top))))


def _stream_field(grid: GridQ, spec: ExtensionSpec) -> FaceField:
    """Face field whose fluxes are differences of ``Psi = g(y) eta Psi_1(Z/eta)`` at the vertices.

    Interior cells are exactly flux-balanced; the only imbalance is the
    top-wall flux ``eta (2/5)(g_i - g_{i+1})``, which vanishes for constant data.
    """
    ops = SigmaOperators(grid)
    eta = spec.eta
    g = spec.g_values(grid.y_f)
    Zv = np.outer(grid.h_f, grid.zeta_w)               # vertices (nx, nz+1)
    Psi = g[:, None] * eta * psi_primitive(Zv / eta)
    Fh = Psi[:, 1:] - Psi[:, :-1]
    u = Fh / (grid.h_f[:, None] * grid.dz)
    Fs = Psi[:, 1:-1] - np.roll(Psi, -1, axis=0)[:, 1:-1]  # interior sigma faces
    ubar = (ops.avg_ue_to_w @ np.concatenate(
        [g[:, None], u, np.zeros((grid.nx, 1))], axis=1).ravel()).reshape(grid.nx, grid.nz - 1)
    zeta = grid.zeta_w[1:-1][None, :]
    W = Fs / grid.dy + zeta * grid.hp_c_disc[:, None] * ubar
    return FaceField(grid, u, W, g.copy(), np.zeros(grid.nx))


def _check_eta(spec: ExtensionSpec, h: GapProfile) -> None:
    if not 0 < spec.eta < h.h_min:
        raise ValueError(f"layer width eta={spec.eta} must lie in (0, h_min={h.h_min})")


def simple_extension(spec: ExtensionSpec, h: GapProfile, grid: Optional[GridQ] = None,
                     nx: int = 64, nz: int = 64) -> ExtensionField:
    """Extension ``(s psi(Z/eta), 0)`` of constant wall data, discretely divergence free."""
    _check_eta(spec, h)
    if not spec.is_constant:
        raise ValueError("simple_extension needs constant wall data; use corrected_extension")
    grid = grid or GridQ(h, nx, nz, 1.0)
    return ExtensionField(spec, _stream_field(grid, spec))


def corrected_extension(spec: ExtensionSpec, h: GapProfile, grid: Optional[GridQ] = None,
                        nx: int = 64, nz: int = 64) -> ExtensionField:
    """Extension of variable data: ``u~ - B[div u~]`` with ``u~ = (g(y) psi(Z/eta), 0)``."""
    _check_eta(spec, h)
    grid = grid or GridQ(h, nx, nz, 1.0)
    base = _stream_field(grid, spec)
    div = base.divergence()
    if np.max(np.abs(div)) == 0.0:
        return ExtensionField(spec, base, FaceField.zeros(grid))
    B = bogovskii_solve(DivergenceProblem(grid, div))
    return ExtensionField(spec, base - B, B)


def extension_on_grid(grid: GridQ, s: float, eta: float) -> np.ndarray:
    """Flattened ``Ue`` values (walls included) of the discrete simple extension."""
    spec = ExtensionSpec(float(s), eta)
    return _stream_field(grid, spec).u_ext().ravel()


# ----------------------------------------------------------------------------
# functional inequalities
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class SmoothField:
    """Random smooth vector field ``v_c(y, Z) = w_c(zeta) sum_kl a_ckl phi_k(y) zeta^l``.

    ``zeta = Z / h(y)``; the weight ``w_c`` is ``(1 - zeta)`` (vanishes on the
    top wall) or ``zeta (1 - zeta)`` (vanishes on both walls).
    """

    gap: GapProfile
    coef: np.ndarray              # (ncomp, 2K+1, L+1)
    both_walls: tuple[bool, ...]
    seed: Optional[int] = None

    @property
    def ncomp(self) -> int:
        return self.coef.shape[0]

    def _basis(self, y):
        K = (self.coef.shape[1] - 1) // 2
        k = np.arange(1, K + 1)
        arg = 2 * np.pi * np.multiply.outer(y, k)
        phi = np.concatenate([np.ones(y.shape + (1,)), np.cos(arg), np.sin(arg)], axis=-1)
        dphi = np.concatenate([np.zeros(y.shape + (1,)), -2 * np.pi * k * np.sin(arg),
                               2 * np.pi * k * np.cos(arg)], axis=-1)
        return phi, dphi

    def evaluate(self, y, Z):
        """Values and physical derivatives ``(v, d_y v, d_Z v)``, each ``(ncomp, ...)``."""
        y, Z = np.broadcast_arrays(np.asarray(y, float), np.asarray(Z, float))
        h, hp = self.gap.h(y), self.gap.dh(y)
        zeta = Z / h
        phi, dphi = self._basis(y)
        L = self.coef.shape[2]
        zp = zeta[..., None] ** np.arange(L)
        dzp = np.concatenate([np.zeros(zeta.shape + (1,)),
                              np.arange(1, L) * zeta[..., None] ** np.arange(L - 1)], axis=-1)
        vals, dys, dzs = [], [], []
        for c in range(self.ncomp):
            A = self.coef[c]
            F = np.einsum("...k,kl,...l->...", phi, A, zp)
            Fy = np.einsum("...k,kl,...l->...", dphi, A, zp)
            Fz = np.einsum("...k,kl,...l->...", phi, A, dzp)
            if self.both_walls[c]:
                w, dw = zeta * (1 - zeta), 1 - 2 * zeta
            else:
                w, dw = 1 - zeta, -np.ones_like(zeta)
            G, Gz = w * F, dw * F + w * Fz
            Gy = w * Fy
            vals.append(G)
            dys.append(Gy - zeta * hp / h * Gz)   # d_y at fixed Z
            dzs.append(Gz / h)
        return np.array(vals), np.array(dys), np.array(dzs)


def random_admissible_field(kind: str, gap: GapProfile, seed: int, modes: int = 3,
                            degree: int = 3) -> SmoothField:
    """Random smooth field satisfying the trace hypotheses of ``kind``.

    ``poincare``: scalar vanishing at ``Z = h``.  ``anisotropic``: vector
    vanishing at ``Z = h`` with zero normal component at ``Z = 0``.
    ``korn``: vector vanishing on both walls.
    """
    rng = np.random.default_rng(seed)
    ncomp, walls = {"poincare": (1, (False,)), "anisotropic": (2, (False, True)),
                    "korn": (2, (True, True))}[kind]
    K = modes
    decay = 1.0 / (1.0 + np.concatenate([[0], np.arange(1, K + 1), np.arange(1, K + 1)])) ** 2
    coef = rng.standard_normal((ncomp, 2 * K + 1, degree + 1)) * decay[None, :, None]
    return SmoothField(gap, coef, walls, seed)


@dataclass
class InequalityReport:
    kind: str
    lhs: float
    rhs: float
    ratio: float
    constant: float
    seed: Optional[int] = None
    exceeds: bool = False

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _quadrature(grid: GridQ, nq_y: Optional[int] = None, nq_z: Optional[int] = None):
    # periodic midpoint rule in y (spectral for trigonometric data), Gauss in zeta
    ny = nq_y or max(4 * grid.nx, 64)
    nzq = nq_z or max(grid.nz, 24)
    y = (np.arange(ny) + 0.5) / ny
    xg, wg = np.polynomial.legendre.leggauss(nzq)
    zeta = 0.5 * (xg + 1)
    h = grid.gap.h(y)
    Y = np.repeat(y, nzq).reshape(ny, nzq)
    Z = np.outer(h, zeta)
    Wt = np.outer(h / ny, 0.5 * wg)
    return Y, Z, Wt


def inequality_check(kind: str, field: SmoothField, grid: GridQ, eps: float = 1.0, *,
                     mu: float = 1.0, lambda_visc: float = 1.0, trace_tol: float = 1e-12) -> InequalityReport:
    """Ratio ``LHS / RHS`` of one of the functional inequalities on the film.

    ``poincare``
        ``||v|| <= eps ||grad v||`` on the unscaled film ``{0 < z < eps h}``;
        in film coordinates the ratio is ``||v|| / (eps^2 ||d_y v||^2 + ||d_Z v||^2)^(1/2)``.
    ``korn``
        ``||grad v||^2 <= c int S(grad v) : grad v`` with ``c = 1/mu``, on the unscaled film.
    ``anisotropic``
        ``||v||_4 <= (||d_y v|| + ||v||)^(1/2) (||d_Z v|| + ||v||)^(1/2)`` on ``Q``.

    Raises
    ------
    HypothesisViolation
        If the field does not vanish where the inequality requires it.
    """
    gap = grid.gap
    ytest = np.linspace(0, 1, 257)
    top = field.evaluate(ytest, gap.h(ytest))[0]
    if np.max(np.abs(top)) > trace_tol:
        raise HypothesisViolation(f"{kind}: field does not vanish on Z = h (max {np.max(np.abs(top)):.3e})")
    bottom = field.evaluate(ytest, np.zeros_like(ytest))[0]
    if kind == "korn" and np.max(np.abs(bottom)) > trace_tol:
        raise HypothesisViolation("korn: field must vanish on both walls")
    if kind == "anisotropic" and field.ncomp > 1 and np.max(np.abs(bottom[-1])) > trace_tol:
        raise HypothesisViolation("anisotropic: normal component must vanish on Z = 0")

    Y, Z, Wt = _quadrature(grid)
    v, vy, vz = field.evaluate(Y, Z)

    def l2(a):
        return math.sqrt(float(np.sum(np.sum(a**2, axis=0) * Wt)))

    if kind == "poincare":
        lhs = l2(v)
        rhs = math.sqrt(eps**2 * l2(vy) ** 2 + l2(vz) ** 2)
        const = 1.0
    elif kind == "korn":
        if field.ncomp != 2:
            raise HypothesisViolation("korn needs a two-component field")
        # unscaled film: components (v1, v2), derivatives (d_y, eps^-1 d_Z)
        g11, g12 = vy[0], vz[0] / eps
        g21, g22 = vy[1], vz[1] / eps
        grad2 = g11**2 + g12**2 + g21**2 + g22**2
        div = g11 + g22
        sym = g11**2 + g22**2 + 2 * g12 * g21
        s_dot = mu * (grad2 + sym) + lambda_visc * div**2
        const = 1.0 / mu
        lhs = float(np.sum(grad2 * Wt))
        rhs = const * float(np.sum(s_dot * Wt))
    elif kind == "anisotropic":
        norm4 = float(np.sum(np.sum(v**2, axis=0) ** 2 * Wt)) ** 0.25
        n2 = l2(v)
        lhs = norm4
        rhs = math.sqrt((l2(vy) + n2) * (l2(vz) + n2))
        const = 1.0
    else:
        raise ValueError(f"unknown inequality {kind!r}")
    ratio = 0.0 if lhs == 0.0 else (lhs / rhs if rhs > 0 else math.inf)
    return InequalityReport(kind, lhs, rhs, ratio, const, field.seed, ratio > 1.0)
