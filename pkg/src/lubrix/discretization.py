"""Sparse operators on the staggered sigma grid and forward-mode Jacobians.

Flattening convention: a field of shape ``(nx, m)`` is stored row-major,
index ``i * m + j``.  Staggers (see :class:`lubrix.domain.GridQ`):

=========  ===============  ==================================
name       shape            location
=========  ===============  ==================================
``C``      ``(nx, nz)``     cell centres
``U``      ``(nx, nz)``     vertical faces, interior rows
``Ue``     ``(nx, nz+2)``   ``U`` plus wall rows at ``zeta = 0, 1``
``W``      ``(nx, nz-1)``   interior horizontal faces
``We``     ``(nx, nz+1)``   ``W`` plus wall rows
=========  ===============  ==================================
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

from .domain import GridQ

__all__ = ["Dual", "lin", "lagrange_matrix", "SigmaOperators"]


# ----------------------------------------------------------------------------
# forward-mode automatic differentiation with sparse Jacobians
# ----------------------------------------------------------------------------

class Dual:
    """Value with a sparse Jacobian with respect to a global unknown vector.

    ``jac`` is ``None`` for constants.  Only the handful of operations the
    residuals need are implemented: sums, products, division by constants,
    left multiplication by sparse matrices (:func:`lin`) and elementwise
    functions (:meth:`apply`).
    """

    __slots__ = ("val", "jac")
    __array_ufunc__ = None  # make numpy defer to the reflected Dual operators

    def __init__(self, val, jac=None):
        self.val = np.asarray(val, dtype=float)
        self.jac = jac

    @classmethod
    def variable(cls, val, offset: int, n_total: int) -> "Dual":
        val = np.asarray(val, dtype=float)
        m = val.size
        jac = sparse.csr_matrix((np.ones(m), (np.arange(m), offset + np.arange(m))), shape=(m, n_total))
        return cls(val, jac)

    @staticmethod
    def _scale(v, jac):
        if jac is None:
            return None
        return sparse.diags(np.broadcast_to(v, (jac.shape[0],)), format="csr") @ jac

    @staticmethod
    def _add(a, b):
        if a is None:
            return b
        if b is None:
            return a
        return a + b

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self._add(self.jac, other.jac))
        return Dual(self.val + other, self.jac)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, None if self.jac is None else -self.jac)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val,
                        self._add(self._scale(other.val, self.jac), self._scale(self.val, other.jac)))
        return Dual(self.val * other, self._scale(other, self.jac))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            raise TypeError("division by a Dual is not needed and not supported")
        return self * (1.0 / np.asarray(other, dtype=float))

    def apply(self, f, df) -> "Dual":
        """Elementwise ``f`` with derivative ``df``."""
        return Dual(f(self.val), self._scale(df(self.val), self.jac))

    @property
    def size(self) -> int:
        return self.val.size


def lin(A, x):
    """``A @ x`` for a sparse matrix and a :class:`Dual` or an array."""
    if isinstance(x, Dual):
        return Dual(A @ x.val, None if x.jac is None else (A @ x.jac).tocsr())
    return A @ x


def const(x) -> Dual:
    return Dual(x)


# ----------------------------------------------------------------------------
# one-dimensional stencils
# ----------------------------------------------------------------------------

def _taylor_weights(nodes: np.ndarray, t: float, deriv: int) -> np.ndarray:
    # weights w with sum_k w_k (x_k - t)^m = m! [m == deriv], m = 0..len(nodes)-1
    d = nodes - t
    m = len(nodes)
    A = np.vander(d, m, increasing=True).T
    rhs = np.zeros(m)
    rhs[deriv] = float(np.prod(np.arange(1, deriv + 1)))
    return np.linalg.solve(A, rhs)


def lagrange_matrix(src: np.ndarray, tgt: np.ndarray, deriv: int, width: int = 3) -> sparse.csr_matrix:
    """Interpolation/differentiation from nodes ``src`` to points ``tgt``.

    Each target uses the ``width`` nearest consecutive source nodes, so the
    stencil is centred in the interior and one-sided next to the ends.
    """
    src = np.asarray(src, dtype=float)
    rows, cols, vals = [], [], []
    for r, t in enumerate(np.asarray(tgt, dtype=float)):
        k = int(np.argmin(np.abs(src - t)))
        start = min(max(k - (width - 1) // 2, 0), len(src) - width)
        idx = np.arange(start, start + width)
        w = _taylor_weights(src[idx], t, deriv)
        rows += [r] * width
        cols += idx.tolist()
        vals += w.tolist()
    return sparse.csr_matrix((vals, (rows, cols)), shape=(len(tgt), len(src)))


def _periodic(n: int, offsets_weights: dict[int, float]) -> sparse.csr_matrix:
    rows, cols, vals = [], [], []
    for off, w in offsets_weights.items():
        rows.append(np.arange(n))
        cols.append((np.arange(n) + off) % n)
        vals.append(np.full(n, w))
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n, n))


def _two_point(n_out: int, lower_offset: int, n_in: int, w_lo: float, w_hi: float) -> sparse.csr_matrix:
    """Row ``r`` combines inputs ``r + lower_offset`` and ``r + lower_offset + 1``."""
    r = np.arange(n_out)
    rows = np.concatenate([r, r])
    cols = np.concatenate([r + lower_offset, r + lower_offset + 1])
    vals = np.concatenate([np.full(n_out, w_lo), np.full(n_out, w_hi)])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n_out, n_in))


def _kron(A, B):
    return sparse.kron(A, B, format="csr")


# ----------------------------------------------------------------------------
# operators on GridQ
# ----------------------------------------------------------------------------

@dataclass(eq=False)
class SigmaOperators:
    """All linear operators needed by the thin-film and divergence solvers.

    Physical derivatives are written through the sigma chain rule
    ``d_y|_Z = d_y|_zeta - a d_zeta`` with ``a = zeta h'/h`` and
    ``d_Z = d_zeta / h``.
    """

    grid: GridQ

    def __post_init__(self) -> None:
        g = self.grid
        nx, nz = g.nx, g.nz
        self.nx, self.nz = nx, nz
        self.dy, self.dz = g.dy, g.dz
        self.Ix = sparse.identity(nx, format="csr")
        self.zeta_ue = np.concatenate([[0.0], g.zeta_c, [1.0]])
        self.zeta_we = g.zeta_w
        self.n_c = nx * nz
        self.n_u = nx * nz
        self.n_w = nx * (nz - 1)

    # -- embedding of interior unknowns into fields with wall rows ------------
    @cached_property
    def ext_u(self) -> sparse.csr_matrix:
        nz = self.nz
        S = sparse.csr_matrix((np.ones(nz), (np.arange(1, nz + 1), np.arange(nz))), shape=(nz + 2, nz))
        return _kron(self.Ix, S)

    def ext_u_bc(self, bottom: float, top: float = 0.0) -> np.ndarray:
        b = np.zeros((self.nx, self.nz + 2))
        b[:, 0], b[:, -1] = bottom, top
        return b.ravel()

    @cached_property
    def ext_w(self) -> sparse.csr_matrix:
        nz = self.nz
        S = sparse.csr_matrix((np.ones(nz - 1), (np.arange(1, nz), np.arange(nz - 1))), shape=(nz + 1, nz - 1))
        return _kron(self.Ix, S)

    @cached_property
    def interior_u(self) -> sparse.csr_matrix:
        return self.ext_u.T.tocsr()

    @cached_property
    def interior_w(self) -> sparse.csr_matrix:
        return self.ext_w.T.tocsr()

    # -- zeta stencils -------------------------------------------------------
    def _zcol(self, src, tgt, deriv):
        return _kron(self.Ix, lagrange_matrix(src, tgt, deriv))

    @cached_property
    def dz1_ue_u(self):
        return self._zcol(self.zeta_ue, self.grid.zeta_c, 1)

    @cached_property
    def dz2_ue_u(self):
        return self._zcol(self.zeta_ue, self.grid.zeta_c, 2)

    @cached_property
    def dz1_we_w(self):
        return self._zcol(self.zeta_we, self.zeta_we[1:-1], 1)

    @cached_property
    def dz2_we_w(self):
        return self._zcol(self.zeta_we, self.zeta_we[1:-1], 2)

    @cached_property
    def dz1_c_c(self):
        return self._zcol(self.grid.zeta_c, self.grid.zeta_c, 1)

    @cached_property
    def dz1_c_w(self):
        """zeta-derivative from cells to interior horizontal faces (compact two-point)."""
        nz = self.nz
        return _kron(self.Ix, _two_point(nz - 1, 0, nz, -1.0 / self.dz, 1.0 / self.dz))

    @cached_property
    def avgz_c_w(self):
        nz = self.nz
        return _kron(self.Ix, _two_point(nz - 1, 0, nz, 0.5, 0.5))

    @cached_property
    def avgz_c_we(self):
        """Cells to all horizontal faces; wall rows copy the adjacent cell (zero normal gradient)."""
        nz = self.nz
        M = sparse.lil_matrix((nz + 1, nz))
        M[0, 0] = 1.0
        M[nz, nz - 1] = 1.0
        for j in range(1, nz):
            M[j, j - 1] = M[j, j] = 0.5
        return _kron(self.Ix, M.tocsr())

    @cached_property
    def copyz_c_ue(self):
        """Cells to the ``Ue`` rows; wall rows copy the adjacent cell."""
        nz = self.nz
        M = sparse.lil_matrix((nz + 2, nz))
        M[0, 0] = 1.0
        M[nz + 1, nz - 1] = 1.0
        for j in range(nz):
            M[j + 1, j] = 1.0
        return _kron(self.Ix, M.tocsr())

    # -- periodic y stencils -------------------------------------------------
    def _ycol(self, M, m):
        return _kron(M, sparse.identity(m, format="csr"))

    def dy_same(self, m: int):
        return self._ycol(_periodic(self.nx, {-1: -0.5 / self.dy, 1: 0.5 / self.dy}), m)

    def dyy_same(self, m: int):
        d2 = 1.0 / self.dy**2
        return self._ycol(_periodic(self.nx, {-1: d2, 0: -2 * d2, 1: d2}), m)

    def dy_c_to_f(self, m: int):
        """Cells ``i-1, i`` to face ``i``."""
        return self._ycol(_periodic(self.nx, {-1: -1.0 / self.dy, 0: 1.0 / self.dy}), m)

    def avgy_c_to_f(self, m: int):
        return self._ycol(_periodic(self.nx, {-1: 0.5, 0: 0.5}), m)

    def dy_f_to_c(self, m: int):
        """Faces ``i, i+1`` to cell ``i``."""
        return self._ycol(_periodic(self.nx, {0: -1.0 / self.dy, 1: 1.0 / self.dy}), m)

    def avgy_f_to_c(self, m: int):
        return self._ycol(_periodic(self.nx, {0: 0.5, 1: 0.5}), m)

    # -- cross-stagger averages ------------------------------------------------
    @cached_property
    def avg_ue_to_w(self):
        """Four-point average of ``Ue`` onto interior ``W`` nodes."""
        nz = self.nz
        zav = _two_point(nz - 1, 1, nz + 2, 0.5, 0.5)  # W row j (1..nz-1) <- Ue rows j, j+1
        return _kron(_periodic(self.nx, {0: 0.5, 1: 0.5}), zav)

    @cached_property
    def avg_we_to_u(self):
        nz = self.nz
        zav = _two_point(nz, 0, nz + 1, 0.5, 0.5)  # U row j <- We rows j, j+1
        return _kron(_periodic(self.nx, {-1: 0.5, 0: 0.5}), zav)

    # -- metric fields -----------------------------------------------------------
    def _metric(self, y_h, y_hp, y_hpp, zeta):
        h = np.repeat(y_h, len(zeta))
        hp = np.repeat(y_hp, len(zeta))
        hpp = np.repeat(y_hpp, len(zeta))
        z = np.tile(zeta, len(y_h))
        a = z * hp / h
        a_z = hp / h
        a_y = z * (hpp * h - hp**2) / h**2
        return dict(h=h, a=a, a_z=a_z, a_y=a_y)

    @cached_property
    def metric_u(self):
        g = self.grid
        return self._metric(g.h_f, g.hp_f, g.hpp_f, g.zeta_c)

    @cached_property
    def metric_w(self):
        g = self.grid
        return self._metric(g.h_c, g.hp_c, g.hpp_c, self.zeta_we[1:-1])

    @cached_property
    def metric_c(self):
        g = self.grid
        return self._metric(g.h_c, g.hp_c, g.hpp_c, g.zeta_c)

    # -- physical derivatives on the velocity staggers -------------------------------
    def _family(self, which: str):
        if which == "u":
            m, mext = self.metric_u, self.nz + 2
            R = self.interior_u
            dz1, dz2 = self.dz1_ue_u, self.dz2_ue_u
        else:
            m, mext = self.metric_w, self.nz + 1
            R = self.interior_w
            dz1, dz2 = self.dz1_we_w, self.dz2_we_w
        dy1 = R @ self.dy_same(mext)
        dy2 = R @ self.dyy_same(mext)
        # mixed derivative: y-central of the zeta derivative taken on each column
        dyz = self._ycol(_periodic(self.nx, {-1: -0.5 / self.dy, 1: 0.5 / self.dy}),
                         dz1.shape[0] // self.nx) @ dz1
        return m, dy1, dy2, dz1, dz2, dyz

    def _grad_lap(self, which: str, eps: float):
        m, dy1, dy2, dz1, dz2, dyz = self._family(which)
        D = sparse.diags
        gy = (dy1 - D(m["a"]) @ dz1).tocsr()
        gz = (D(1.0 / m["h"]) @ dz1).tocsr()
        dyy = dy2 - 2 * D(m["a"]) @ dyz + D(m["a"] ** 2) @ dz2 - D(m["a_y"] - m["a"] * m["a_z"]) @ dz1
        lap = (eps**2 * dyy + D(1.0 / m["h"] ** 2) @ dz2).tocsr()
        return gy, gz, lap

    def grad_lap_u(self, eps: float):
        """``(d_y|_Z, d_Z, L_eps)`` from ``Ue`` to interior ``U`` nodes, ``L_eps = eps^2 d_yy + d_ZZ``."""
        return self._grad_lap("u", eps)

    def grad_lap_w(self, eps: float):
        return self._grad_lap("w", eps)

    @cached_property
    def grad_c_to_u(self):
        """``d_y|_Z`` of a cell field at ``U`` nodes."""
        nz = self.nz
        dzc = self.avgy_c_to_f(nz) @ self.dz1_c_c
        return (self.dy_c_to_f(nz) - sparse.diags(self.metric_u["a"]) @ dzc).tocsr()

    @cached_property
    def gradz_c_to_w(self):
        """``d_Z`` of a cell field at interior ``W`` nodes."""
        return (sparse.diags(1.0 / self.metric_w["h"]) @ self.dz1_c_w).tocsr()

    # -- finite-volume divergence ---------------------------------------------------
    @cached_property
    def hflux_u(self):
        """Horizontal face flux per unit normal velocity: ``h_f dzeta``."""
        return np.repeat(self.grid.h_f, self.nz) * self.dz

    @cached_property
    def sflux_u_w(self):
        """Contribution of ``u`` to the sigma flux ``dy (W - zeta h' u)`` at interior ``W`` nodes."""
        zeta = np.tile(self.zeta_we[1:-1], self.nx)
        hp = np.repeat(self.grid.hp_c_disc, self.nz - 1)
        ubar = self.avg_ue_to_w @ self.ext_u
        return (sparse.diags(-self.dy * zeta * hp) @ ubar).tocsr()

    @cached_property
    def div_h(self):
        """Net flux out of each cell from horizontal face fluxes."""
        return self.dy_f_to_c(self.nz) * self.dy

    @cached_property
    def div_s(self):
        """Net flux out of each cell from interior sigma-face fluxes (walls carry none)."""
        nz = self.nz
        M = sparse.lil_matrix((nz, nz - 1))
        for j in range(nz - 1):
            M[j, j] = 1.0       # face above cell j
            M[j + 1, j] = -1.0  # face below cell j+1
        return _kron(self.Ix, M.tocsr())

    @cached_property
    def vol(self):
        return self.grid.vol.ravel()

    def face_fluxes(self, u, W):
        """``(F_h, F_s)``: horizontal fluxes on ``U`` nodes and sigma fluxes on interior ``W`` nodes."""
        Fh = self.hflux_u * u
        Fs = lin(self.sflux_u_w, u) + self.dy * W
        return Fh, Fs

    def divergence(self, u, W):
        """Finite-volume ``d_y u + d_Z W`` at cell centres (net outflow over volume)."""
        Fh, Fs = self.face_fluxes(u, W)
        return (lin(self.div_h, Fh) + lin(self.div_s, Fs)) / self.vol

    # -- transport of a cell quantity ------------------------------------------------
    def face_selectors(self, Fh_val, Fs_val, scheme: str):
        """Matrices picking the face value of a cell field for given flux signs."""
        nz = self.nz
        if scheme == "central":
            return self.avgy_c_to_f(nz), self.avgz_c_w
        if scheme != "upwind":
            raise ValueError(f"unknown transport scheme {scheme!r}")
        left = self._ycol(_periodic(self.nx, {-1: 1.0}), nz)   # cell i-1 for face i
        right = sparse.identity(self.n_c, format="csr")
        pos = (Fh_val > 0).astype(float)
        Sh = sparse.diags(pos) @ left + sparse.diags(1 - pos) @ right
        below = _kron(self.Ix, _two_point(nz - 1, 0, nz, 1.0, 0.0))
        above = _kron(self.Ix, _two_point(nz - 1, 0, nz, 0.0, 1.0))
        pos_s = (Fs_val > 0).astype(float)
        Ss = sparse.diags(pos_s) @ below + sparse.diags(1 - pos_s) @ above
        return Sh.tocsr(), Ss.tocsr()

    def transport(self, q, u, W, scheme: str = "upwind"):
        """Net outflow of ``q u`` from each cell (not divided by volume)."""
        Fh, Fs = self.face_fluxes(u, W)
        Fh_v = Fh.val if isinstance(Fh, Dual) else Fh
        Fs_v = Fs.val if isinstance(Fs, Dual) else Fs
        Sh, Ss = self.face_selectors(Fh_v, Fs_v, scheme)
        qh = lin(Sh, q)
        qs = lin(Ss, q)
        return lin(self.div_h, _mul(qh, Fh)) + lin(self.div_s, _mul(qs, Fs))

    def neumann_laplacian(self, eps: float) -> sparse.csr_matrix:
        """Two-point-flux operator ``K`` with ``K rho ~ -vol (d_yy + eps^-2 d_ZZ) rho``.

        Horizontal transmissibility ``h_f dzeta / dy``, vertical
        ``eps^-2 dy / (h_c dzeta)``; the sigma cross terms are dropped so that
        ``K`` is a symmetric M-matrix with zero row sums.
        """
        nx, nz = self.nx, self.nz
        g = self.grid
        idx = np.arange(self.n_c).reshape(nx, nz)
        th = np.repeat(g.h_f * self.dz / self.dy, nz)
        left = np.roll(idx, 1, axis=0).ravel()  # cell i-1 across face i
        tv = np.repeat(eps**-2 * self.dy / (g.h_c * self.dz), nz - 1)
        a = np.concatenate([left, idx[:, :-1].ravel()])
        b = np.concatenate([idx.ravel(), idx[:, 1:].ravel()])
        t = np.concatenate([th, tv])
        rows = np.concatenate([a, b, a, b])
        cols = np.concatenate([a, b, b, a])
        vals = np.concatenate([t, t, -t, -t])
        return sparse.csr_matrix((vals, (rows, cols)), shape=(self.n_c, self.n_c))


def _mul(a, b):
    if isinstance(a, Dual):
        return a * b
    if isinstance(b, Dual):
        return b * a
    return a * b
