"""Stationary compressible Navier-Stokes flow in a thin periodic film.

Unknowns on the staggered sigma grid of :class:`lubrix.domain.GridQ`:
density ``rho`` at cell centres, horizontal velocity ``u_h`` on vertical
faces and the rescaled vertical velocity ``W = V / eps`` on horizontal
faces.  With ``P = p_R(rho) + sqrt(delta) rho`` and
``L_eps = eps^2 d_yy + d_ZZ`` the discrete equations are

* ``delta rho - delta (d_yy + eps^-2 d_ZZ) rho + d_y(T(rho) u_h) + d_Z(T(rho) W) = delta rho_M``
* ``eps^2 c_u + d_y P = mu L_eps u_h + eps^2 (lambda+mu) d_y D
  + delta (L_eps(rho u_h) - eps^2 rho u_h)``
* ``eps^4 c_W + d_Z P = eps^2 [mu L_eps W + (lambda+mu) d_Z D
  + delta (L_eps(rho W) - eps^2 rho W)]``

where ``D = d_y u_h + d_Z W`` and ``c = T(rho)(u.grad)u + u div(T(rho) u)``.
Walls carry ``u_h = s, W = 0`` at ``Z = 0`` and ``u_h = W = 0`` at ``Z = h``.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .discretization import Dual, SigmaOperators, lin
from .divfree import extension_on_grid
from .domain import GapProfile, GridQ
from .eos import PressureLaw, RegularizedEOS
from .reynolds import ReynoldsProblem, ReynoldsSolution, _dpdy_first_integral, solve_reynolds

__all__ = [
    "ThinFilmProblem",
    "ThinFilmOptions",
    "ThinFilmState",
    "EstimateReport",
    "ContinuityError",
    "ContinuationStall",
    "solve_regularized_continuity",
    "momentum_step",
    "solve_thinfilm",
    "epsilon_sweep",
    "SweepRow",
]

log = logging.getLogger(__name__)


class ContinuityError(RuntimeError):
    """The regularized continuity equation could not be solved."""


class ContinuationStall(RuntimeError):
    """Delta continuation stalled; carries the last converged stage."""

    def __init__(self, message: str, delta: float | None = None, state: "ThinFilmState | None" = None):
        super().__init__(message)
        self.delta = delta
        self.state = state


# ----------------------------------------------------------------------------
# problem data
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ThinFilmProblem:
    """Physical data of one thin-film solve.

    ``mass`` is the total mass on the rescaled film ``Q``; the mean density
    is ``mass / |Q|`` with ``|Q| = int h``.
    """

    h: GapProfile
    mu: float
    lambda_visc: float
    s: float
    eps: float
    mass: float
    law: PressureLaw

    def __post_init__(self) -> None:
        if not (self.mu > 0 and self.lambda_visc > 0):
            raise ValueError("mu and lambda_visc must be positive")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0 < self.mean_density < self.law.rho_bar:
            raise ValueError(f"mean density {self.mean_density} must lie in (0, rho_bar)")

    @classmethod
    def from_mean_density(cls, h, mu, lambda_visc, s, eps, mean_density, law) -> "ThinFilmProblem":
        return cls(h, mu, lambda_visc, s, eps, mean_density * h.integral(), law)

    @property
    def mean_density(self) -> float:
        return self.mass / self.h.integral()


@dataclass(frozen=True)
class ThinFilmOptions:
    nx: int = 64
    nz: int = 32
    delta0: float = 1.0
    delta_min: float = 1e-3
    shrink: float = 0.5
    R_factor: float = 1e3
    method: str = "newton"          # "newton" | "picard"
    relax: float = 0.7
    transport: str = "central"      # "central" | "upwind"
    tol: float = 1e-12
    max_newton: int = 40
    max_outer: int = 300


@dataclass
class ThinFilmState:
    """Discrete thin-film fields.

    ``uh`` has shape ``(nx, nz)`` (vertical faces, interior rows) and ``W``
    shape ``(nx, nz - 1)`` (interior horizontal faces).  ``V = eps * W`` is
    the vertical velocity in the unscaled film.
    """

    grid: GridQ
    rho: np.ndarray
    uh: np.ndarray
    W: np.ndarray
    delta: float
    s: float
    history: list = field(default_factory=list)
    mass_history: list = field(default_factory=list)
    stages: list = field(default_factory=list)

    @property
    def V(self) -> np.ndarray:
        return self.grid.eps * self.W

    def uh_ext(self) -> np.ndarray:
        out = np.zeros((self.grid.nx, self.grid.nz + 2))
        out[:, 0] = self.s
        out[:, 1:-1] = self.uh
        return out

    def W_ext(self) -> np.ndarray:
        out = np.zeros((self.grid.nx, self.grid.nz + 1))
        out[:, 1:-1] = self.W
        return out

    def cell_velocity(self) -> tuple[np.ndarray, np.ndarray]:
        """``(u_h, V)`` averaged to cell centres."""
        u = 0.5 * (self.uh + np.roll(self.uh, -1, axis=0))
        we = self.W_ext()
        return u, self.grid.eps * 0.5 * (we[:, :-1] + we[:, 1:])

    def mass(self) -> float:
        return float(np.sum(self.rho * self.grid.vol))


@dataclass
class EstimateReport:
    energy_lhs: float
    energy_rhs: float
    energy_ratio: float
    pressure_mean: float
    pressure_l2: float
    vertical_pressure_variation: float
    renormalized_residual: float
    min_density: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


# ----------------------------------------------------------------------------
# discrete system
# ----------------------------------------------------------------------------

class _System:
    """Residuals of the coupled system on one grid."""

    def __init__(self, prob: ThinFilmProblem, grid: GridQ, R: float, transport: str):
        self.prob, self.grid, self.R = prob, grid, R
        self.ops = ops = SigmaOperators(grid)
        self.transport = transport
        self.rho_M = prob.mass / grid.area
        self.gy_u, self.gz_u, self.lap_u = ops.grad_lap_u(grid.eps)
        self.gy_w, self.gz_w, self.lap_w = ops.grad_lap_w(grid.eps)
        self.K = ops.neumann_laplacian(grid.eps)
        self.avg_cu = ops.avgy_c_to_f(grid.nz)
        self.copy_cue = ops.avgy_c_to_f(grid.nz + 2) @ ops.copyz_c_ue
        self.avg_cw = ops.avgz_c_w
        self.copy_cwe = ops.avgz_c_we
        self.avg_cu_cells = ops.avgy_c_to_f(grid.nz)
        self.bc_u = ops.ext_u_bc(prob.s)
        self.nc, self.nu, self.nw = ops.n_c, ops.n_u, ops.n_w

    def reg(self, delta: float) -> RegularizedEOS:
        return RegularizedEOS(self.prob.law, self.R, delta, self.rho_M)

    # pieces ---------------------------------------------------------------
    def T(self, rho):
        rb = self.prob.law.rho_bar
        f = lambda r: np.clip(r, 0.0, rb)
        df = lambda r: ((r > 0) & (r < rb)).astype(float)
        return rho.apply(f, df) if isinstance(rho, Dual) else f(rho)

    def P(self, rho, reg: RegularizedEOS):
        f = lambda r: reg._p_R(r) + reg.sqrt_delta * r
        df = lambda r: reg._dp_R(np.maximum(r, 0.0)) + reg.sqrt_delta
        return rho.apply(f, df) if isinstance(rho, Dual) else f(rho)

    def continuity(self, rho, u, W, g, delta, scheme=None):
        """Residual per unit volume: ``delta rho + (delta K rho + div T u)/vol - g``."""
        ops = self.ops
        flux = ops.transport(self.T(rho), u, W, scheme or self.transport)
        return delta * rho + (delta * lin(self.K, rho) + flux) / ops.vol - g

    def momentum(self, rho, u, W, delta, lagged=None):
        """Momentum residuals at ``U`` and ``W`` nodes; ``lagged=(u, W)`` freezes convection."""
        prob, ops, eps = self.prob, self.ops, self.grid.eps
        mu, lv = prob.mu, prob.lambda_visc
        reg = self.reg(delta)
        P = self.P(rho, reg)
        ue = lin(ops.ext_u, u) + self.bc_u
        we = lin(ops.ext_w, W)
        D = ops.divergence(u, W)
        rho_u = lin(self.avg_cu, rho)
        rho_ue = lin(self.copy_cue, rho)
        rho_w = lin(self.avg_cw, rho)
        rho_we = lin(self.copy_cwe, rho)

        cu, cw = self._convection(rho, u, W, lagged)

        Ru = (eps**2 * cu + lin(ops.grad_c_to_u, P)
              - mu * lin(self.lap_u, ue) - eps**2 * (lv + mu) * lin(ops.grad_c_to_u, D)
              - delta * (lin(self.lap_u, rho_ue * ue) - eps**2 * rho_u * u))
        Rw = (eps**4 * cw + lin(ops.gradz_c_to_w, P)
              - eps**2 * (mu * lin(self.lap_w, we) + (lv + mu) * lin(ops.gradz_c_to_w, D)
                          + delta * (lin(self.lap_w, rho_we * we) - eps**2 * rho_w * W)))
        return Ru, Rw

    def _convection(self, rho, u, W, lagged):
        ops = self.ops
        if lagged is not None:
            u, W = lagged
            rho = rho.val if isinstance(rho, Dual) else rho
        Tr = self.T(rho)
        ue = lin(ops.ext_u, u) + self.bc_u
        we = lin(ops.ext_w, W)
        divT = ops.transport(Tr, u, W, "central") / ops.vol
        # at U nodes
        Tu = lin(self.avg_cu, Tr)
        W_at_u = lin(ops.avg_we_to_u, we)
        cu = Tu * (_m(u, lin(self.gy_u, ue)) + _m(W_at_u, lin(self.gz_u, ue))) + _m(u, lin(self.avg_cu, divT))
        # at W nodes
        Tw = lin(self.avg_cw, Tr)
        u_at_w = lin(ops.avg_ue_to_w, ue)
        cw = Tw * (_m(u_at_w, lin(self.gy_w, we)) + _m(W, lin(self.gz_w, we))) + _m(W, lin(self.avg_cw, divT))
        return cu, cw

    # assembly ---------------------------------------------------------------
    def split(self, x):
        nc, nu = self.nc, self.nu
        return x[:nc], x[nc:nc + nu], x[nc + nu:]

    def full(self, x, delta, g=None):
        n = x.size
        r_, u_, w_ = self.split(x)
        rho = Dual.variable(r_, 0, n)
        u = Dual.variable(u_, self.nc, n)
        W = Dual.variable(w_, self.nc + self.nu, n)
        g = delta * self.rho_M if g is None else g
        Rc = self.continuity(rho, u, W, g, delta)
        Ru, Rw = self.momentum(rho, u, W, delta)
        val = np.concatenate([Rc.val, Ru.val, Rw.val])
        jac = sparse.vstack([Rc.jac, Ru.jac, Rw.jac], format="csc")
        return val, jac

    def residual_norms(self, x, delta) -> dict:
        r_, u_, w_ = self.split(x)
        Rc = self.continuity(r_, u_, w_, delta * self.rho_M, delta)
        Ru, Rw = self.momentum(r_, u_, w_, delta)
        return {"continuity": float(np.max(np.abs(Rc))), "momentum_u": float(np.max(np.abs(Ru))),
                "momentum_w": float(np.max(np.abs(Rw)))}


def _m(a, b):
    if isinstance(a, Dual) or not isinstance(b, Dual):
        return a * b
    return b * a


# ----------------------------------------------------------------------------
# regularized continuity equation
# ----------------------------------------------------------------------------

def solve_regularized_continuity(grid: GridQ, u, g, delta: float, *, rho_bar: float = 1.0,
                                 scheme: str = "upwind", method: str = "newton", rho0=None,
                                 tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Solve ``delta rho - delta Lap_eps rho + div(T(rho) u) = g`` with zero-flux walls.

    Parameters
    ----------
    grid : GridQ
    u : tuple of arrays
        ``(u_h, W)`` on the staggered faces; wall fluxes vanish by construction.
    g : array or float
        Source per unit volume at cell centres.
    delta : float
        Regularization parameter, ``delta > 0``.
    scheme : {"upwind", "central"}
        Face value of ``T(rho)``.  Upwinding makes every linearization an
        M-matrix, which gives the discrete comparison principle.
    method : {"newton", "picard"}
        Semismooth Newton (default) or the lagged-transport fixed point whose
        steps are symmetric positive definite Helmholtz solves; the latter only
        contracts when ``|u| / delta`` is small.

    Returns
    -------
    ndarray of shape ``(nx, nz)``
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    ops = SigmaOperators(grid)
    uh, W = (np.asarray(a, dtype=float).ravel() for a in u)
    g = np.asarray(g, dtype=float)
    g = np.full(ops.n_c, float(g)) if g.ndim == 0 else g.ravel()
    if g.size != ops.n_c:
        raise ValueError(f"source has {g.size} values, expected {ops.n_c}")
    K = ops.neumann_laplacian(grid.eps)
    vol = ops.vol
    rb = rho_bar
    T = lambda r: np.clip(r, 0.0, rb)
    dT = lambda r: ((r > 0) & (r < rb)).astype(float)
    rho = (g / delta).copy() if rho0 is None else np.array(rho0, dtype=float).ravel()

    def residual(r):
        if isinstance(r, Dual):
            t = r.apply(T, dT)
        else:
            t = T(r)
        return delta * r + (delta * lin(K, r) + ops.transport(t, uh, W, scheme)) / vol - g

    scale = max(float(np.max(np.abs(g))), delta * rb, 1e-300)
    if method == "newton":
        for it in range(max_iter):
            d = residual(Dual.variable(rho, 0, ops.n_c))
            nrm = _relative_residual(d.val, d.jac, rho, 1e-3 * scale)
            if nrm < tol:
                break
            step = splinalg.spsolve(d.jac.tocsc(), -d.val)
            rho = rho + step
        else:
            raise ContinuityError(f"Newton did not converge in {max_iter} iterations (residual {nrm:.3e})")
    elif method == "picard":
        A = sparse.diags(delta * vol) + delta * K
        solve = splinalg.factorized(A.tocsc())
        for it in range(max_iter):
            rhs = g * vol - ops.transport(T(rho), uh, W, scheme)
            new = solve(rhs)
            change = float(np.max(np.abs(new - rho))) / max(float(np.max(np.abs(new))), 1e-300)
            rho = new
            if change < tol:
                break
        else:
            raise ContinuityError(f"Picard iteration did not converge in {max_iter} iterations "
                                  f"(last relative change {change:.3e})")
    else:
        raise ValueError(f"unknown method {method!r}")
    return rho.reshape(grid.nx, grid.nz)


# ----------------------------------------------------------------------------
# momentum
# ----------------------------------------------------------------------------

def momentum_step(state: ThinFilmState, prob: ThinFilmProblem, options: ThinFilmOptions = ThinFilmOptions(),
                  system: Optional[_System] = None) -> tuple[np.ndarray, np.ndarray]:
    """Velocity from the momentum equations with frozen density and lagged convection.

    With ``rho`` and the convecting velocity frozen the system is linear in
    ``(u_h, W)``, so one sparse solve returns the exact minimizer.
    """
    sysm = system or _System(prob, state.grid, options.R_factor / prob.law.rho_bar, options.transport)
    n = sysm.nu + sysm.nw
    u = Dual.variable(state.uh.ravel(), 0, n)
    W = Dual.variable(state.W.ravel(), sysm.nu, n)
    Ru, Rw = sysm.momentum(state.rho.ravel(), u, W, state.delta,
                           lagged=(state.uh.ravel(), state.W.ravel()))
    J = sparse.vstack([Ru.jac, Rw.jac], format="csc")
    r = np.concatenate([Ru.val, Rw.val])
    dx = splinalg.spsolve(J, -r)
    if not np.all(np.isfinite(dx)):
        raise np.linalg.LinAlgError("momentum system is singular")
    un = state.uh.ravel() + dx[:sysm.nu]
    wn = state.W.ravel() + dx[sysm.nu:]
    return un.reshape(state.uh.shape), wn.reshape(state.W.shape)


# ----------------------------------------------------------------------------
# coupled solve with delta continuation
# ----------------------------------------------------------------------------

def _newton_stage(sysm: _System, x: np.ndarray, delta: float, opts: ThinFilmOptions, state: ThinFilmState):
    """Damped Newton with a componentwise relative residual.

    Row ``i`` is measured against ``(|J| |x|)_i + base_i``, the size of the
    terms that cancel in it, so the tolerance stays meaningful when the
    ``eps^-2`` diffusion makes individual terms large.
    """
    base = _residual_scale(sysm)
    val, jac = sysm.full(x, delta)
    measure = lambda v, j, x: _relative_residual(v, j, x, base)
    nrm = measure(val, jac, x)
    for it in range(opts.max_newton):
        state.history.append((delta, nrm))
        state.mass_history.append(float(np.sum(sysm.split(x)[0] * sysm.ops.vol)))
        if nrm < opts.tol:
            return x, nrm, it
        dx = splinalg.spsolve(jac, -val)
        if not np.all(np.isfinite(dx)):
            raise ContinuationStall(f"singular Jacobian at delta={delta}")
        t = 1.0
        while True:
            xn = x + t * dx
            vn, jn = sysm.full(xn, delta)
            nn = measure(vn, jn, xn)
            if np.isfinite(nn) and (nn < (1 - 1e-4 * t) * nrm or nn < opts.tol):
                break
            t *= 0.5
            if t < 1e-6:
                raise ContinuationStall(f"line search failed at delta={delta}, residual {nrm:.3e}")
        x, val, jac, nrm = xn, vn, jn, nn
    state.history.append((delta, nrm))
    if nrm < opts.tol:
        return x, nrm, opts.max_newton
    raise ContinuationStall(f"Newton did not converge at delta={delta} (residual {nrm:.3e})")


def _residual_scale(sysm: _System) -> np.ndarray:
    prob = sysm.prob
    c = 1e-3 * sysm.rho_M
    mscale = 1e-3 * prob.mu * max(prob.s, 1.0)
    return np.concatenate([np.full(sysm.nc, c), np.full(sysm.nu, mscale),
                           np.full(sysm.nw, mscale)])


def _relative_residual(val, jac, x, base) -> float:
    return float(np.max(np.abs(val) / (abs(jac) @ np.abs(x) + base)))


def _picard_stage(sysm: _System, state: ThinFilmState, delta: float, opts: ThinFilmOptions):
    grid = sysm.grid
    base = _residual_scale(sysm)
    nrm = np.inf
    for it in range(opts.max_outer):
        rho = solve_regularized_continuity(grid, (state.uh, state.W), delta * sysm.rho_M, delta,
                                           rho_bar=sysm.prob.law.rho_bar, scheme=sysm.transport,
                                           rho0=state.rho)
        state.rho = rho
        un, wn = momentum_step(state, sysm.prob, opts, sysm)
        state.uh = opts.relax * un + (1 - opts.relax) * state.uh
        state.W = opts.relax * wn + (1 - opts.relax) * state.W
        x = np.concatenate([state.rho.ravel(), state.uh.ravel(), state.W.ravel()])
        val, jac = sysm.full(x, delta)
        nrm = _relative_residual(val, jac, x, base)
        state.history.append((delta, nrm))
        state.mass_history.append(state.mass())
        if not np.isfinite(nrm) or nrm > 1e8:
            raise ContinuationStall(f"Picard iteration diverged at delta={delta}", delta)
        if nrm < opts.tol:
            return it + 1, nrm
    raise ContinuationStall(f"Picard iteration did not converge at delta={delta} (residual {nrm:.3e})", delta)


def delta_schedule(opts: ThinFilmOptions) -> list[float]:
    out, d = [], opts.delta0
    while d > opts.delta_min * (1 + 1e-12):
        out.append(d)
        d *= opts.shrink
    out.append(opts.delta_min)
    return out


def solve_thinfilm(prob: ThinFilmProblem, options: ThinFilmOptions = ThinFilmOptions(),
                   initial: Optional[ThinFilmState] = None) -> tuple[ThinFilmState, EstimateReport]:
    """Solve the regularized thin-film system and continue ``delta`` down to ``delta_min``.

    Each stage is warm-started from the previous one.  The default coupled
    Newton method conserves the discrete mass exactly at every iteration
    because the mass balance is linear in ``rho``.

    Raises
    ------
    ContinuationStall
        With the last converged ``delta`` and state attached.
    """
    grid = GridQ(prob.h, options.nx, options.nz, prob.eps)
    R = options.R_factor / prob.law.rho_bar
    sysm = _System(prob, grid, R, options.transport)
    if initial is None:
        state = ThinFilmState(grid, np.full((grid.nx, grid.nz), sysm.rho_M), np.zeros((grid.nx, grid.nz)),
                              np.zeros((grid.nx, grid.nz - 1)), options.delta0, prob.s)
    else:
        state = replace(initial, history=[], mass_history=[], stages=[])
    last_good: Optional[ThinFilmState] = None
    t0 = time.perf_counter()
    for delta in delta_schedule(options):
        state.delta = delta
        try:
            if options.method == "newton":
                x = np.concatenate([state.rho.ravel(), state.uh.ravel(), state.W.ravel()])
                x, nrm, its = _newton_stage(sysm, x, delta, options, state)
                r_, u_, w_ = sysm.split(x)
                state.rho = r_.reshape(grid.nx, grid.nz)
                state.uh = u_.reshape(grid.nx, grid.nz)
                state.W = w_.reshape(grid.nx, grid.nz - 1)
            elif options.method == "picard":
                its, nrm = _picard_stage(sysm, state, delta, options)
            else:
                raise ValueError(f"unknown method {options.method!r}")
        except ContinuationStall as exc:
            exc.state = last_good
            exc.delta = last_good.delta if last_good is not None else None
            raise
        state.stages.append({"delta": delta, "iterations": its, "residual": nrm,
                             "mass_error": abs(state.mass() - prob.mass),
                             "min_rho": float(state.rho.min())})
        log.debug("delta=%.3e converged in %d iterations, residual %.2e", delta, its, nrm)
        last_good = replace(state, rho=state.rho.copy(), uh=state.uh.copy(), W=state.W.copy(),
                            history=list(state.history), mass_history=list(state.mass_history),
                            stages=list(state.stages))
    report = estimate_report(state, prob, sysm)
    state.stages.append({"wall_time_s": time.perf_counter() - t0})
    return state, report


# ----------------------------------------------------------------------------
# diagnostics
# ----------------------------------------------------------------------------

def pressure_field(state: ThinFilmState, prob: ThinFilmProblem, R_factor: float = 1e3) -> np.ndarray:
    """``p_R(rho)`` at the cells (equal to ``p(rho)`` below the truncation knot)."""
    R = R_factor / prob.law.rho_bar
    rho_M = prob.mass / state.grid.area
    reg = RegularizedEOS(prob.law, R, max(state.delta, 1e-300), rho_M)
    return reg._p_R(np.maximum(state.rho, 0.0))


def vertical_variation(p: np.ndarray, vol: np.ndarray) -> float:
    pm = p.mean(axis=1, keepdims=True)
    num = math.sqrt(float(np.sum((p - pm) ** 2 * vol)))
    den = math.sqrt(float(np.sum(p**2 * vol)))
    return num / den if den > 0 else 0.0


def estimate_report(state: ThinFilmState, prob: ThinFilmProblem, sysm: Optional[_System] = None,
                    R_factor: float = 1e3) -> EstimateReport:
    grid = state.grid
    sysm = sysm or _System(prob, grid, R_factor / prob.law.rho_bar, "central")
    ops = sysm.ops
    eps = grid.eps
    vol = grid.vol
    vol_u = np.repeat(grid.h_f, grid.nz) * grid.dy * grid.dz
    vol_w = np.repeat(grid.h_c, grid.nz - 1) * grid.dy * grid.dz

    eta = 0.5 * grid.gap.h_min
    ubar_e = extension_on_grid(grid, prob.s, eta)  # values on Ue rows
    ue = state.uh_ext().ravel()
    we = state.W_ext().ravel()
    diff = ue - ubar_e
    lhs = (np.sum(ops.interior_u @ diff ** 2 * vol_u)
           + eps**2 * np.sum(((sysm.gy_u @ diff) ** 2 + eps**-2 * (sysm.gz_u @ diff) ** 2) * vol_u)
           + np.sum((eps * state.W.ravel()) ** 2 * vol_w)
           + eps**2 * np.sum(((eps * (sysm.gy_w @ we)) ** 2 + (sysm.gz_w @ we) ** 2) * vol_w))
    rhs = eps**2 * np.sum(((sysm.gy_u @ ubar_e) ** 2 + eps**-2 * (sysm.gz_u @ ubar_e) ** 2) * vol_u)

    p = pressure_field(state, prob, R_factor)
    D = ops.divergence(state.uh.ravel(), state.W.ravel()).reshape(grid.nx, grid.nz)
    area = grid.area
    return EstimateReport(
        energy_lhs=float(lhs),
        energy_rhs=float(rhs),
        energy_ratio=float(lhs / rhs) if rhs > 0 else (0.0 if lhs == 0 else math.inf),
        pressure_mean=float(np.sum(p * state.rho * vol) / area),
        pressure_l2=math.sqrt(float(np.sum(p**2 * vol))),
        vertical_pressure_variation=vertical_variation(p, vol),
        renormalized_residual=float(np.sum(state.rho * D * vol)),
        min_density=float(state.rho.min()),
    )


# ----------------------------------------------------------------------------
# epsilon sweep
# ----------------------------------------------------------------------------

@dataclass
class SweepRow:
    eps: float
    status: str
    metrics: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    wall_time_s: float = 0.0
    error: Optional[str] = None
    state: Optional[ThinFilmState] = field(default=None, repr=False)
    report: Optional[EstimateReport] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"eps": self.eps, "status": self.status, "metrics": self.metrics,
                "residuals": self.residuals, "wall_time_s": self.wall_time_s, "error": self.error,
                "estimates": self.report.to_dict() if self.report else None}


def sweep_metrics(state: ThinFilmState, prob: ThinFilmProblem, ref: ReynoldsSolution,
                  R_factor: float = 1e3) -> dict:
    """Distances of a thin-film state to the Reynolds limit ``ref``.

    Returns the relative vertical pressure variation, the L2 distance
    between the vertically averaged pressure and the Reynolds pressure
    (absolute and relative) and the L2 distance between the shear rates
    ``d_Z u_h``.
    """
    grid = state.grid
    p = pressure_field(state, prob, R_factor)
    vol = grid.vol
    pbar = p.mean(axis=1)
    p_ref = prob.law.p(ref.density(grid.y_c))
    l2_mean = math.sqrt(float(np.sum((pbar - p_ref) ** 2) * grid.dy))
    ops = SigmaOperators(grid)
    _, gz, _ = ops.grad_lap_u(grid.eps)
    dzu = gz @ state.uh_ext().ravel()
    rp = ReynoldsProblem(prob.h, prob.mu, prob.s, prob.mass, prob.law)
    yy = np.repeat(grid.y_f, grid.nz)
    ZZ = grid.Z_u().ravel()
    # exact Z-derivative of the limit profile
    dpdy, hh = _dpdy_first_integral(rp, ref, yy)
    dzu_ref = dpdy * (2 * ZZ - hh) / (2 * prob.mu) - prob.s / hh
    vol_u = np.repeat(grid.h_f, grid.nz) * grid.dy * grid.dz
    return {
        "vertical_pressure_variation": vertical_variation(p, vol),
        "mean_pressure_l2_distance": l2_mean,
        "mean_pressure_rel_distance": l2_mean / math.sqrt(float(np.sum(p_ref**2) * grid.dy)),
        "shear_l2_distance": math.sqrt(float(np.sum((dzu - dzu_ref) ** 2 * vol_u))),
    }


def epsilon_sweep(template: ThinFilmProblem, eps_list: Sequence[float],
                  options: ThinFilmOptions = ThinFilmOptions(), threads: int = 1,
                  reynolds_n: int = 1024) -> list[SweepRow]:
    """Thin-film solves over decreasing ``eps`` compared with the Reynolds limit.

    Cases are independent and may run on a thread pool; rows come back in
    the order of ``eps_list``.  A failing case is recorded with status
    ``"failed"`` and the sweep continues.
    """
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    rprob = ReynoldsProblem(template.h, template.mu, template.s, template.mass, template.law)
    ref = solve_reynolds(rprob, n=reynolds_n)

    def run(eps: float) -> SweepRow:
        t0 = time.perf_counter()
        prob = replace(template, eps=eps)
        try:
            state, report = solve_thinfilm(prob, options)
        except Exception as exc:  # recorded, the sweep goes on
            return SweepRow(eps, "failed", wall_time_s=time.perf_counter() - t0, error=f"{type(exc).__name__}: {exc}")
        metrics = sweep_metrics(state, prob, ref, options.R_factor)
        last = [st for st in state.stages if "residual" in st][-1]
        residuals = {"final": last["residual"], "mass_error": last["mass_error"],
                     "max_mass_drift": float(np.max(np.abs(np.array(state.mass_history) - prob.mass)))}
        return SweepRow(eps, "ok", metrics, residuals, time.perf_counter() - t0, None, state, report)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, eps_list))
    else:
        rows = [run(e) for e in eps_list]
    return rows
