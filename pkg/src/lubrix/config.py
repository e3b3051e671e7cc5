"""Run configuration loaded from TOML and the JSON solver report.

A single file drives every command so that Reynolds and thin-film runs
always share the same gap, viscosity, sliding speed and mass.  Example::

    [eos]
    family = "rational"
    rho_bar = 1.0

    [gap]
    kind = "cosine"
    mean = 1.0
    cos_amplitudes = [0.5]

    [physics]
    mu = 1.0
    s = 1.0
    mean_density = 0.4

    [thinfilm]
    eps_list = [0.2, 0.1, 0.05]

Unset keys take the defaults of the dataclasses below.
"""
from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np

from .domain import GapProfile
from .eos import FAMILIES, PressureLaw
from .reynolds import FVOptions, ReynoldsProblem, ShootingOptions
from .thinfilm import ThinFilmOptions, ThinFilmProblem

__all__ = [
    "ConfigError",
    "EOSConfig",
    "GapConfig",
    "GridConfig",
    "PhysicsConfig",
    "ReynoldsConfig",
    "ThinFilmConfig",
    "ChecksConfig",
    "OutputConfig",
    "RunConfig",
    "load_config",
    "parse_config",
    "SolverReport",
]


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every violated constraint."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class EOSConfig:
    family: str = "rational"
    rho_bar: float = 1.0
    a: float = 1.0
    gamma: float = 1.0
    theta: float = 1.0

    def law(self) -> PressureLaw:
        return PressureLaw(self.family, self.rho_bar, self.a, self.gamma, self.theta)


@dataclass(frozen=True)
class GapConfig:
    kind: str = "cosine"
    mean: float = 1.0
    cos_amplitudes: tuple[float, ...] = (0.5,)

    def profile(self) -> GapProfile:
        amps = self.cos_amplitudes if self.kind == "cosine" else ()
        return GapProfile(self.mean, tuple(amps))


@dataclass(frozen=True)
class GridConfig:
    """Resolutions: ``n`` cells for Reynolds, ``nx`` by ``nz`` for the film."""

    n: int = 1024
    nx: int = 64
    nz: int = 32


@dataclass(frozen=True)
class PhysicsConfig:
    """Set either ``mass`` (``int h rho dy``) or ``mean_density``, not both."""

    mu: float = 1.0
    lambda_visc: float = 1.0
    s: float = 1.0
    mass: Optional[float] = None
    mean_density: Optional[float] = None


@dataclass(frozen=True)
class ReynoldsConfig:
    solver: str = "shooting"
    tol_shoot: float = 1e-10
    tol_mass: float = 1e-10
    rtol: float = 1e-12
    atol: float = 1e-14
    fv_tol: float = 1e-11
    fv_levels: tuple[int, ...] = (128, 256, 512)


@dataclass(frozen=True)
class ThinFilmConfig:
    eps: float = 0.1
    eps_list: tuple[float, ...] = (0.2, 0.1, 0.05)
    delta0: float = 1.0
    delta_min: float = 1e-3
    shrink: float = 0.5
    R_factor: float = 1e3
    method: str = "newton"
    relax: float = 0.7
    transport: str = "central"
    tol: float = 1e-12
    max_newton: int = 40
    max_outer: int = 300


@dataclass(frozen=True)
class ChecksConfig:
    samples: int = 50
    seed: int = 0
    identity_samples: int = 1000
    identity_delta: float = 0.5
    identity_R_factor: float = 1e3


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"


SECTIONS = {
    "eos": EOSConfig,
    "gap": GapConfig,
    "grid": GridConfig,
    "physics": PhysicsConfig,
    "reynolds": ReynoldsConfig,
    "thinfilm": ThinFilmConfig,
    "checks": ChecksConfig,
    "output": OutputConfig,
}


@dataclass(frozen=True)
class RunConfig:
    eos: EOSConfig = EOSConfig()
    gap: GapConfig = GapConfig()
    grid: GridConfig = GridConfig()
    physics: PhysicsConfig = PhysicsConfig()
    reynolds: ReynoldsConfig = ReynoldsConfig()
    thinfilm: ThinFilmConfig = ThinFilmConfig()
    checks: ChecksConfig = ChecksConfig()
    output: OutputConfig = OutputConfig()

    # derived objects ------------------------------------------------------
    def law(self) -> PressureLaw:
        return self.eos.law()

    def gap_profile(self) -> GapProfile:
        return self.gap.profile()

    @property
    def total_mass(self) -> float:
        """``M = int h rho dy``; identical on the torus and on the rescaled film."""
        ph = self.physics
        if ph.mass is not None:
            return float(ph.mass)
        md = 0.4 if ph.mean_density is None else ph.mean_density
        return float(md) * self.gap.mean

    @property
    def mean_density(self) -> float:
        return self.total_mass / self.gap.mean

    def reynolds_problem(self) -> ReynoldsProblem:
        ph = self.physics
        return ReynoldsProblem(self.gap_profile(), ph.mu, ph.s, self.total_mass, self.law())

    def shooting_options(self) -> ShootingOptions:
        r = self.reynolds
        return ShootingOptions(rtol=r.rtol, atol=r.atol, tol_shoot=r.tol_shoot, tol_mass=r.tol_mass)

    def fv_options(self) -> FVOptions:
        return FVOptions(tol=self.reynolds.fv_tol)

    def thinfilm_problem(self, eps: Optional[float] = None) -> ThinFilmProblem:
        ph = self.physics
        return ThinFilmProblem(self.gap_profile(), ph.mu, ph.lambda_visc, ph.s,
                               self.thinfilm.eps if eps is None else eps, self.total_mass, self.law())

    def thinfilm_options(self) -> ThinFilmOptions:
        t = self.thinfilm
        return ThinFilmOptions(nx=self.grid.nx, nz=self.grid.nz, delta0=t.delta0, delta_min=t.delta_min,
                               shrink=t.shrink, R_factor=t.R_factor, method=t.method, relax=t.relax,
                               transport=t.transport, tol=t.tol, max_newton=t.max_newton,
                               max_outer=t.max_outer)

    # serialization ----------------------------------------------------------
    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def physics_dict(self) -> dict:
        """Everything except the output location, with the mass resolved.

        Equivalent ways of fixing the mass (``mass``, ``mean_density`` or the
        default) map to the same entries, so they share one hash.
        """
        d = self.to_dict()
        d.pop("output")
        d["physics"]["mass"] = self.total_mass
        d["physics"]["mean_density"] = None
        return d

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.physics_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


# ----------------------------------------------------------------------------
# parsing and validation
# ----------------------------------------------------------------------------

def _coerce(section: str, cls, raw: Mapping[str, Any], errors: list[str]):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            errors.append(f"unknown key '{section}.{key}'")
            continue
        default = known[key].default
        try:
            kwargs[key] = _convert(value, default, known[key].type)
        except (TypeError, ValueError) as exc:
            errors.append(f"'{section}.{key}': {exc}")
    return cls(**kwargs)


def _convert(value, default, annotation: str):
    ann = str(annotation)
    if ann.startswith("tuple"):
        if not isinstance(value, (list, tuple)):
            raise TypeError(f"expected a list, got {type(value).__name__}")
        inner = int if "int" in ann else float
        return tuple(_scalar(v, inner) for v in value)
    if "Optional" in ann:
        return None if value is None else _scalar(value, float)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise TypeError("expected a boolean")
        return value
    if isinstance(default, int):
        return _scalar(value, int)
    if isinstance(default, float):
        return _scalar(value, float)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise TypeError(f"expected a string, got {type(value).__name__}")
        return value
    return value


def _scalar(value, kind):
    if isinstance(value, bool):
        raise TypeError("expected a number, got a boolean")
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"expected an integer, got {value}")
        if not isinstance(value, (int, float)):
            raise TypeError(f"expected an integer, got {type(value).__name__}")
        return int(value)
    if not isinstance(value, (int, float)):
        raise TypeError(f"expected a number, got {type(value).__name__}")
    return float(value)


def _validate(cfg: RunConfig, errors: list[str]) -> None:
    e, g, gr, ph, r, t, c = cfg.eos, cfg.gap, cfg.grid, cfg.physics, cfg.reynolds, cfg.thinfilm, cfg.checks

    def need(cond: bool, msg: str) -> None:
        if not cond:
            errors.append(msg)

    def finite(x) -> bool:
        return isinstance(x, (int, float)) and math.isfinite(x)

    # eos
    need(e.family in FAMILIES, f"eos.family must be one of {list(FAMILIES)}, got {e.family!r}")
    need(finite(e.rho_bar) and e.rho_bar > 0, "eos.rho_bar must be positive")
    need(finite(e.a) and e.a > 0, "eos.a must be positive")
    need(finite(e.theta) and e.theta > 0, "eos.theta must be positive")
    need(e.family != "rational" or e.gamma >= 1, "eos.gamma must be >= 1 for the rational family")
    # gap
    need(g.kind in ("constant", "cosine"), f"gap.kind must be 'constant' or 'cosine', got {g.kind!r}")
    need(g.kind != "constant" or not any(g.cos_amplitudes),
         "gap.cos_amplitudes must be zero for a constant gap")
    try:
        g.profile()
    except ValueError as exc:
        errors.append(f"gap: {exc}")
    # grid
    need(gr.n >= 16, "grid.n must be >= 16")
    need(gr.nx >= 4 and gr.nz >= 4, "grid.nx and grid.nz must be >= 4")
    # physics
    need(ph.mu > 0, "physics.mu must be positive")
    need(ph.lambda_visc > 0, "physics.lambda_visc must be positive")
    need(ph.s >= 0, "physics.s must be >= 0")
    need(ph.mass is None or ph.mean_density is None, "set only one of physics.mass and physics.mean_density")
    if ph.mass is None or ph.mean_density is None:
        md = cfg.mean_density
        need(md > 0, "mean density M / int h must be positive")
        need(e.rho_bar <= 0 or md < e.rho_bar,
             f"mean density {md:g} must be below the maximal density rho_bar = {e.rho_bar:g}")
        if t.R_factor > 1 and e.rho_bar > 0:
            knot = e.rho_bar * (1 - 1 / t.R_factor)
            need(md < knot, f"truncation point rho_bar (1 - 1/R_factor) = {knot:g} must exceed the "
                            f"mean density {md:g}")
            knot_c = e.rho_bar * (1 - 1 / c.identity_R_factor) if c.identity_R_factor > 1 else 0.0
            need(md < knot_c, "checks.identity_R_factor puts the truncation point below the mean density")
    # reynolds
    need(r.solver in ("shooting", "fv"), f"reynolds.solver must be 'shooting' or 'fv', got {r.solver!r}")
    for name in ("tol_shoot", "tol_mass", "rtol", "atol", "fv_tol"):
        need(getattr(r, name) > 0, f"reynolds.{name} must be positive")
    need(len(r.fv_levels) >= 3 and all(b == 2 * a for a, b in zip(r.fv_levels, r.fv_levels[1:])),
         "reynolds.fv_levels must hold at least three successively doubled resolutions")
    need(all(n >= 16 for n in r.fv_levels), "reynolds.fv_levels entries must be >= 16")
    # thinfilm
    need(t.eps > 0, "thinfilm.eps must be positive")
    need(len(t.eps_list) >= 1 and all(x > 0 for x in t.eps_list), "thinfilm.eps_list must hold positive values")
    need(all(b < a for a, b in zip(t.eps_list, t.eps_list[1:])), "thinfilm.eps_list must be strictly decreasing")
    need(0 < t.delta_min <= t.delta0, "thinfilm.delta_min must lie in (0, delta0]")
    need(0 < t.shrink < 1, "thinfilm.shrink must lie in (0, 1)")
    need(t.R_factor > 1, "thinfilm.R_factor must exceed 1 (R > 1/rho_bar)")
    need(t.method in ("newton", "picard"), f"thinfilm.method must be 'newton' or 'picard', got {t.method!r}")
    need(t.transport in ("central", "upwind"), "thinfilm.transport must be 'central' or 'upwind'")
    need(0 < t.relax <= 1, "thinfilm.relax must lie in (0, 1]")
    need(t.tol > 0, "thinfilm.tol must be positive")
    need(t.max_newton >= 1 and t.max_outer >= 1, "thinfilm.max_newton and max_outer must be >= 1")
    # checks
    need(c.samples >= 1, "checks.samples must be >= 1")
    need(c.identity_samples >= 1, "checks.identity_samples must be >= 1")
    need(c.identity_delta > 0, "checks.identity_delta must be positive")
    need(c.identity_R_factor > 1, "checks.identity_R_factor must exceed 1")


def parse_config(data: Mapping[str, Any]) -> RunConfig:
    """Build and validate a :class:`RunConfig` from nested mappings.

    Raises
    ------
    ConfigError
        Listing every unknown key, type error and violated constraint.
    """
    errors: list[str] = []
    parts = {}
    for section, value in data.items():
        if section not in SECTIONS:
            errors.append(f"unknown section '{section}'")
            continue
        if not isinstance(value, Mapping):
            errors.append(f"section '{section}' must be a table")
            continue
        if section == "gap" and value.get("kind") == "constant" and "cos_amplitudes" not in value:
            value = {**value, "cos_amplitudes": []}
        parts[section] = _coerce(section, SECTIONS[section], value, errors)
    # keys that failed to parse keep their defaults so the remaining
    # constraints are still checked and reported together
    cfg = RunConfig(**parts)
    _validate(cfg, errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    """Read a TOML file and validate it.

    Raises
    ------
    FileNotFoundError
        If ``path`` does not exist.
    ConfigError
        On a syntax error (with line and column) or any invalid entry.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: TOML parse error: {exc}"]) from exc
    return parse_config(data)


# ----------------------------------------------------------------------------
# report
# ----------------------------------------------------------------------------

@dataclass
class SolverReport:
    """Machine-readable summary written next to every artifact."""

    command: str
    config_hash: str
    version: str
    status: str = "ok"
    results: dict = field(default_factory=dict)
    wall_times: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    error: Optional[dict] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default)

    @classmethod
    def from_json(cls, text: str) -> "SolverReport":
        return cls(**json.loads(text))

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        return path


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")
