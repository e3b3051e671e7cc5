"""Periodic gap geometry and the structured grids built on it.

The horizontal variable ``y`` lives on the unit torus.  The film
``Q = {(y, Z) : 0 < Z < h(y)}`` is mapped onto the unit square with the
sigma coordinate ``zeta = Z / h(y)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize

__all__ = ["GapProfile", "make_gap", "Grid1D", "GridQ", "build_grid_q"]

TWO_PI = 2.0 * np.pi
DENSE_SAMPLES = 10_001


@dataclass(frozen=True)
class GapProfile:
    """Gap ``h(y) = mean + sum_k a_k cos(2 pi k y)`` on the unit torus.

    Parameters
    ----------
    mean : float
        Mean gap height.
    cos_amplitudes : tuple of float
        Amplitude of the ``k``-th cosine mode, ``k = 1, 2, ...``.
    """

    mean: float = 1.0
    cos_amplitudes: tuple[float, ...] = ()
    h_min: float = field(init=False)
    h_max: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "cos_amplitudes", tuple(float(a) for a in self.cos_amplitudes))
        lo, hi = self._extrema()
        if not lo > 0:
            raise ValueError(f"gap profile must stay positive; minimum is {lo:.6g}")
        object.__setattr__(self, "h_min", lo)
        object.__setattr__(self, "h_max", hi)

    @property
    def kind(self) -> str:
        return "cosine" if any(a != 0.0 for a in self.cos_amplitudes) else "constant"

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def _modes(self):
        k = np.arange(1, len(self.cos_amplitudes) + 1, dtype=float)
        return k, np.asarray(self.cos_amplitudes, dtype=float)

    def h(self, y):
        y = np.asarray(y, dtype=float)
        k, a = self._modes()
        out = self.mean + np.cos(TWO_PI * np.multiply.outer(y, k)) @ a if len(k) else self.mean + 0.0 * y
        return float(out) if np.ndim(out) == 0 else out

    def dh(self, y):
        y = np.asarray(y, dtype=float)
        k, a = self._modes()
        out = -np.sin(TWO_PI * np.multiply.outer(y, k)) @ (TWO_PI * k * a) if len(k) else 0.0 * y
        return float(out) if np.ndim(out) == 0 else out

    def d2h(self, y):
        y = np.asarray(y, dtype=float)
        k, a = self._modes()
        out = -np.cos(TWO_PI * np.multiply.outer(y, k)) @ ((TWO_PI * k) ** 2 * a) if len(k) else 0.0 * y
        return float(out) if np.ndim(out) == 0 else out

    def integral(self) -> float:
        """Exact ``int_0^1 h dy``."""
        return float(self.mean)

    def _extrema(self) -> tuple[float, float]:
        if not self.cos_amplitudes:
            return float(self.mean), float(self.mean)
        ys = np.linspace(0.0, 1.0, DENSE_SAMPLES)
        vals = self.h(ys)
        out = []
        for idx, sgn in ((int(np.argmin(vals)), 1.0), (int(np.argmax(vals)), -1.0)):
            y0 = ys[idx]
            res = optimize.minimize_scalar(lambda y: sgn * self.h(y),
                                           bounds=(y0 - 1.0 / DENSE_SAMPLES, y0 + 1.0 / DENSE_SAMPLES),
                                           method="bounded", options={"xatol": 1e-12})
            best = sgn * min(sgn * vals[idx], float(res.fun))
            out.append(best)
        return out[0], out[1]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mean": self.mean, "cos_amplitudes": list(self.cos_amplitudes)}


def make_gap(spec: Mapping | float | GapProfile) -> GapProfile:
    """Build a :class:`GapProfile` from a number or a mapping.

    Examples
    --------
    >>> make_gap(1.0).h(0.3)
    1.0
    >>> make_gap({"kind": "cosine", "mean": 1.0, "cos_amplitudes": [0.5]}).h(0.0)
    1.5
    """
    if isinstance(spec, GapProfile):
        return spec
    if isinstance(spec, (int, float)):
        return GapProfile(float(spec))
    kind = spec.get("kind", "cosine" if spec.get("cos_amplitudes") else "constant")
    mean = float(spec.get("mean", 1.0))
    amps: Sequence[float] = spec.get("cos_amplitudes", ())
    if kind == "constant":
        if any(float(a) != 0.0 for a in amps):
            raise ValueError("constant gap cannot carry cosine amplitudes")
        return GapProfile(mean)
    if kind == "cosine":
        return GapProfile(mean, tuple(amps))
    raise ValueError(f"unknown gap kind {kind!r}")


@dataclass(frozen=True)
class Grid1D:
    """Uniform periodic cell-centred grid on ``[0, 1)``."""

    n: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be positive")

    @property
    def dy(self) -> float:
        return 1.0 / self.n

    @property
    def y(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) / self.n

    @property
    def faces(self) -> np.ndarray:
        """Right faces ``y_{i+1/2}``; the last one coincides with ``1 == 0``."""
        return (np.arange(self.n) + 1.0) / self.n

    def wrap(self, i):
        return np.mod(i, self.n)

    def shift(self, values, k: int) -> np.ndarray:
        return np.roll(np.asarray(values), k)

    def integrate(self, values) -> float:
        """Midpoint rule over the torus."""
        return float(np.sum(values) * self.dy)


@dataclass(frozen=True, eq=False)
class GridQ:
    """Staggered boundary-fitted grid on the film ``Q``.

    Layout (``i`` indexes ``y``, ``j`` indexes ``zeta``; arrays are ``(nx, ...)``):

    * ``C`` cells: centres ``(y_c[i], zeta_c[j])`` carry density and pressure.
    * ``U`` nodes: ``(y_f[i], zeta_c[j])`` on vertical faces carry ``u_h``.
    * ``W`` nodes: ``(y_c[i], zeta_w[j])`` on horizontal faces carry ``V``;
      rows ``j = 0`` and ``j = nz`` sit on the walls.

    Metric data is sampled analytically from the gap profile; the discrete
    slope ``hp_c`` between neighbouring faces is used by the divergence so
    that geometric conservation holds exactly.
    """

    gap: GapProfile
    nx: int
    nz: int
    eps: float

    def __post_init__(self) -> None:
        if self.nx < 4 or self.nz < 4:
            raise ValueError("GridQ needs nx, nz >= 4")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        g = self.gap
        dy, dz = 1.0 / self.nx, 1.0 / self.nz
        y_c = (np.arange(self.nx) + 0.5) * dy
        y_f = np.arange(self.nx) * dy
        zeta_c = (np.arange(self.nz) + 0.5) * dz
        zeta_w = np.arange(self.nz + 1) * dz
        h_f, h_c = g.h(y_f), g.h(y_c)
        h_f_next = np.roll(h_f, -1)
        vals = dict(
            dy=dy, dz=dz, y_c=y_c, y_f=y_f, zeta_c=zeta_c, zeta_w=zeta_w,
            h_c=h_c, h_f=h_f, hp_c_disc=(h_f_next - h_f) / dy,
            hp_c=g.dh(y_c), hp_f=g.dh(y_f), hpp_c=g.d2h(y_c), hpp_f=g.d2h(y_f),
            vol=np.outer(0.5 * (h_f + h_f_next) * dy * dz, np.ones(self.nz)),
        )
        for k, v in vals.items():
            if isinstance(v, np.ndarray):
                v.setflags(write=False)
            object.__setattr__(self, k, v)

    # convenience views ----------------------------------------------------
    @property
    def n_c(self) -> int:
        return self.nx * self.nz

    @property
    def n_u(self) -> int:
        return self.nx * self.nz

    @property
    def n_w(self) -> int:
        return self.nx * (self.nz - 1)

    @property
    def area(self) -> float:
        return float(self.vol.sum())

    def Z_c(self) -> np.ndarray:
        """Physical heights of the density cells, shape ``(nx, nz)``."""
        return np.outer(self.h_c, self.zeta_c)

    def Z_u(self) -> np.ndarray:
        return np.outer(self.h_f, self.zeta_c)

    def Z_w(self) -> np.ndarray:
        return np.outer(self.h_c, self.zeta_w)

    def top_nodes(self) -> np.ndarray:
        """``(y, Z)`` of the wall nodes on ``Z = h(y)``."""
        return np.column_stack([self.y_c, self.h_c * self.zeta_w[-1]])

    def zeta_y(self, y, zeta):
        """Metric ``d zeta / d y`` at fixed ``Z`` equals ``-zeta h'(y)/h(y)``."""
        return -np.asarray(zeta) * self.gap.dh(y) / self.gap.h(y)

    def zeta_Z(self, y):
        """Metric ``d zeta / d Z = 1/h(y)``."""
        return 1.0 / self.gap.h(y)


def build_grid_q(h: GapProfile, nx: int, nz: int, eps: float) -> GridQ:
    return GridQ(h, nx, nz, eps)
