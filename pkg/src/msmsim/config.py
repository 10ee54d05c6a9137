"""Simulation parameters, TOML input/output and magnetic field protocols."""

import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key, msg):
        super().__init__(f"{key}: {msg}")
        self.key = key


def _require(cond, key, msg):
    if not cond:
        raise ConfigError(key, msg)


@dataclass(frozen=True)
class MaterialParams:
    """Material constants in MPa (and MPa/T for the Zeeman coefficient)."""

    eps0: float = 0.058
    C11: float = 160000.0
    C12: float = 156000.0
    C44: float = 40000.0
    E_poly: float = 1.0
    nu_poly: float = 0.45
    Ms_over_mu0: float = 0.50
    Ms2_over_mu0: float = 0.31
    Ku: float = 0.13
    kappa: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            _require(
                isinstance(v, (int, float)) and math.isfinite(v), f.name, "must be a finite number"
            )
        _require(self.C11 > 0, "C11", "must be positive")
        _require(self.C44 > 0, "C44", "must be positive")
        _require(self.C11 > self.C12, "C12", "must be smaller than C11")
        _require(self.E_poly > 0, "E_poly", "must be positive")
        _require(0 < self.nu_poly < 0.5, "nu_poly", "must lie in (0, 0.5)")
        _require(self.eps0 > 0, "eps0", "must be positive")
        for key in ("Ku", "kappa", "Ms_over_mu0", "Ms2_over_mu0"):
            _require(getattr(self, key) >= 0, key, "must be non-negative")

    @property
    def mu_poly(self):
        return self.E_poly / (2.0 * (1.0 + self.nu_poly))

    @property
    def lambda_poly(self):
        nu = self.nu_poly
        return self.E_poly * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))

    @property
    def lame(self):
        return (self.lambda_poly, self.mu_poly)

    @property
    def saturation_field(self):
        """Field equivalent of the magnetization, ``Ms`` in Tesla."""
        if self.Ms_over_mu0 == 0:
            return 0.0
        return self.Ms2_over_mu0 / self.Ms_over_mu0


REFERENCE_PHASES = ("austenite", "martensite")
WORKPIECES = ("none", "circular")


@dataclass(frozen=True)
class GeometryParams:
    particle_radius: float = 0.3
    lattice_angle: float = 0.0
    reference_phase: str = "austenite"
    workpiece: str = "none"

    def __post_init__(self):
        _require(0 < self.particle_radius < 0.5, "particle_radius", "must lie in (0, 0.5)")
        _require(math.isfinite(self.lattice_angle), "lattice_angle", "must be finite")
        _require(
            self.reference_phase in REFERENCE_PHASES,
            "reference_phase",
            f"must be one of {REFERENCE_PHASES}",
        )
        _require(self.workpiece in WORKPIECES, "workpiece", f"must be one of {WORKPIECES}")


@dataclass(frozen=True)
class FieldProtocol:
    """Piecewise-linear field path through ``samples`` = ((t, (Hx, Hy)), ...)."""

    samples: tuple
    description: str = ""

    def __post_init__(self):
        s = tuple((float(t), (float(h[0]), float(h[1]))) for t, h in self.samples)
        object.__setattr__(self, "samples", s)
        _require(len(s) >= 1, "samples", "protocol needs at least one sample")
        t = self.times
        _require(bool(np.all(np.diff(t) > 0)), "samples", "times must be strictly increasing")
        _require(bool(np.all(np.isfinite(self.fields))), "samples", "fields must be finite")

    @property
    def times(self):
        return np.array([t for t, _ in self.samples])

    @property
    def fields(self):
        return np.array([h for _, h in self.samples]).reshape(-1, 2)

    @property
    def T(self):
        return self.samples[-1][0]

    def __len__(self):
        return len(self.samples)

    def H(self, t):
        """Field at time ``t`` (linear interpolation, clamped at the ends)."""
        ts = self.times
        F = self.fields
        return np.array([np.interp(t, ts, F[:, 0]), np.interp(t, ts, F[:, 1])])

    def reparameterized(self, times):
        """Same field samples at new (strictly increasing) times."""
        times = list(times)
        if len(times) != len(self.samples):
            raise ValueError("need one time per sample")
        return FieldProtocol(
            tuple((t, h) for t, (_, h) in zip(times, self.samples)), self.description
        )


PROTOCOL_KINDS = ("uniaxial", "biaxial", "rotated")


def parse_protocol_kind(spec):
    """``'uniaxial' | 'biaxial' | 'rotated:<deg>'`` -> (kind, angle in degrees)."""
    spec = spec.strip()
    if spec.startswith("rotated"):
        _, _, deg = spec.partition(":")
        try:
            return "rotated", float(deg) if deg else 0.0
        except ValueError:
            raise ConfigError("protocol", f"bad rotation angle in {spec!r}") from None
    if spec in ("uniaxial", "biaxial"):
        return spec, 0.0
    raise ConfigError("protocol", f"unknown protocol kind {spec!r}")


def build_protocol(kind, peak, steps_per_leg, angle_deg=0.0):
    """Standard field protocols with ``steps_per_leg`` steps per linear leg.

    ``kind`` is ``uniaxial`` (0, +p, 0, -p, 0, +p horizontally), ``biaxial``
    (0, +p, 0 horizontally, then 0 to +p vertically) or ``rotated`` (the
    uniaxial path along the direction at ``angle_deg``). A ``'rotated:<deg>'``
    string is accepted as ``kind`` too.
    """
    if isinstance(kind, str) and kind.startswith("rotated:"):
        kind, angle_deg = parse_protocol_kind(kind)
    if kind not in PROTOCOL_KINDS:
        raise ConfigError("kind", f"unknown protocol kind {kind!r}")
    _require(peak > 0, "peak", "must be positive")
    _require(int(steps_per_leg) == steps_per_leg and steps_per_leg >= 1, "steps_per_leg",
             "must be a positive integer")
    n = int(steps_per_leg)
    if kind == "biaxial":
        ex = np.array([1.0, 0.0])
        ey = np.array([0.0, 1.0])
        corners = [0 * ex, peak * ex, 0 * ex, peak * ey]
        desc = f"biaxial, peak {peak} T"
    else:
        th = math.radians(angle_deg) if kind == "rotated" else 0.0
        e = np.array([math.cos(th), math.sin(th)])
        corners = [v * e for v in (0.0, peak, 0.0, -peak, 0.0, peak)]
        desc = f"{kind}, peak {peak} T" + (f", angle {angle_deg} deg" if kind == "rotated" else "")
    pts = [corners[0]]
    for a, b in zip(corners[:-1], corners[1:]):
        for j in range(1, n + 1):
            pts.append(a + (b - a) * (j / n))
    samples = tuple((float(i), (float(h[0]), float(h[1]))) for i, h in enumerate(pts))
    return FieldProtocol(samples, desc)


@dataclass(frozen=True)
class SolverParams:
    n_boundary_segments: int = 64
    cell_segments_per_side: int = 32
    laplace_segments_per_side: int = 16
    delta_over_h: float = 2.0
    free_macro_strain: bool = False
    free_twin_angle: bool = False
    grad_tol: float = 1e-6
    max_iter: int = 500
    armijo_c1: float = 1e-4
    fd_step: float = 1e-6
    quadrature_points: int = 4
    tol_E_rel: float = 1e-3
    max_backtrack_per_leg: int = 3
    seed_interval: int = 5
    # between panels, retry flips of magnetizations that oppose the field
    flip_opposed: bool = True
    seeds: tuple = ("warm", "flip1", "flip2", "flip_both", "offset_plus", "offset_minus")

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(self.seeds))
        _require(self.n_boundary_segments >= 16, "n_boundary_segments", "must be at least 16")
        _require(self.cell_segments_per_side >= 2, "cell_segments_per_side", "must be at least 2")
        _require(self.laplace_segments_per_side >= 2, "laplace_segments_per_side",
                 "must be at least 2")
        _require(self.delta_over_h > 0, "delta_over_h", "must be positive")
        _require(self.grad_tol > 0, "grad_tol", "must be positive")
        _require(self.max_iter >= 1, "max_iter", "must be at least 1")
        _require(0 < self.armijo_c1 < 0.5, "armijo_c1", "must lie in (0, 0.5)")
        _require(self.fd_step > 0, "fd_step", "must be positive")
        _require(1 <= self.quadrature_points <= 20, "quadrature_points", "must lie in [1, 20]")
        _require(self.tol_E_rel > 0, "tol_E_rel", "must be positive")
        _require(self.max_backtrack_per_leg >= 0, "max_backtrack_per_leg", "must be >= 0")
        _require(self.seed_interval >= 1, "seed_interval", "must be at least 1")
        unknown = set(self.seeds) - set(SEED_NAMES)
        _require(not unknown, "seeds", f"unknown seeds {sorted(unknown)}")
        _require("warm" in self.seeds, "seeds", "the warm start must be part of the panel")


SEED_NAMES = ("warm", "flip1", "flip2", "flip_both", "offset_plus", "offset_minus")


@dataclass(frozen=True)
class ProtocolParams:
    kind: str = "uniaxial"
    peak: float = 1.0
    steps_per_leg: int = 50
    angle_deg: float = 0.0

    def __post_init__(self):
        _require(self.kind in PROTOCOL_KINDS, "kind", f"must be one of {PROTOCOL_KINDS}")
        _require(self.peak > 0, "peak", "must be positive")
        _require(self.steps_per_leg >= 1, "steps_per_leg", "must be at least 1")

    def build(self):
        return build_protocol(self.kind, self.peak, self.steps_per_leg, self.angle_deg)


@dataclass(frozen=True)
class SimulationConfig:
    material: MaterialParams = field(default_factory=MaterialParams)
    geometry: GeometryParams = field(default_factory=GeometryParams)
    protocol_params: ProtocolParams = field(default_factory=ProtocolParams)
    solver: SolverParams = field(default_factory=SolverParams)
    explicit_protocol: FieldProtocol = None

    @property
    def protocol(self):
        if self.explicit_protocol is not None:
            return self.explicit_protocol
        return self.protocol_params.build()

    # convenience accessors for the fields named in the schema
    @property
    def n_boundary_segments(self):
        return self.solver.n_boundary_segments

    @property
    def delta_over_h(self):
        return self.solver.delta_over_h

    @property
    def free_macro_strain(self):
        return self.solver.free_macro_strain

    def with_(self, **sections):
        """Copy with individual keys replaced, e.g. ``with_(material={"kappa": 0.2})``."""
        out = self
        for sec, vals in sections.items():
            if sec == "explicit_protocol":
                out = replace(out, explicit_protocol=vals)
                continue
            name = _SECTION_ATTR[sec]
            out = replace(out, **{name: replace(getattr(out, name), **vals)})
        return out


_SECTIONS = {
    "material": MaterialParams,
    "geometry": GeometryParams,
    "protocol": ProtocolParams,
    "solver": SolverParams,
}
_SECTION_ATTR = {
    "material": "material",
    "geometry": "geometry",
    "protocol": "protocol_params",
    "solver": "solver",
}


def _coerce(cls, key, value, default):
    if isinstance(default, bool):
        _require(isinstance(value, bool), key, "must be a boolean")
        return value
    if isinstance(default, int):
        _require(isinstance(value, int) and not isinstance(value, bool), key,
                 "must be an integer")
        return value
    if isinstance(default, float):
        _require(isinstance(value, (int, float)) and not isinstance(value, bool), key,
                 "must be a number")
        return float(value)
    if isinstance(default, tuple):
        _require(isinstance(value, list) and all(isinstance(v, str) for v in value), key,
                 "must be a list of strings")
        return tuple(value)
    _require(isinstance(value, str), key, "must be a string")
    return value


def config_from_dict(data):
    """Build a validated config from nested section dictionaries."""
    kwargs = {}
    for sec, body in data.items():
        if sec not in _SECTIONS:
            raise ConfigError(sec, "unknown section")
        if not isinstance(body, dict):
            raise ConfigError(sec, "must be a table")
        cls = _SECTIONS[sec]
        defaults = cls()
        names = {f.name for f in fields(cls)}
        vals = {}
        for key, value in body.items():
            if key not in names:
                if sec == "material" and key in ("lambda_poly", "mu_poly"):
                    raise ConfigError(key, "derived from E_poly and nu_poly; set those instead")
                raise ConfigError(key, f"unknown key in [{sec}]")
            vals[key] = _coerce(cls, key, value, getattr(defaults, key))
        kwargs[_SECTION_ATTR[sec]] = cls(**vals)
    return SimulationConfig(**kwargs)


def load_config(path):
    """Read a TOML config; absent keys take their default values."""
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError("file", f"parse error in {path}: {err}") from err
    return config_from_dict(data)


def config_to_dict(config):
    out = {}
    for sec, attr in _SECTION_ATTR.items():
        d = asdict(getattr(config, attr))
        out[sec] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
    return out


def dump_config(config, path):
    """Write ``config`` as TOML; ``load_config`` reproduces it exactly."""
    if config.explicit_protocol is not None:
        raise ValueError("explicit protocols are not serializable; use protocol parameters")
    with open(path, "wb") as fh:
        tomli_w.dump(config_to_dict(config), fh)
