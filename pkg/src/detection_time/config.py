"""Run configuration: TOML sections, defaults and cross-field validation."""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .grid import SCALAR, SPINOR, GridSpec
from .model import (
    ABC_SPINLESS,
    ABC_SPINOR,
    CAP,
    DETECTOR_KINDS,
    NO_DETECTOR,
    RB87_MASS,
    BlochSpinor,
    DetectorModel,
    PhysicsConfig,
)
from .observables import CONVECTIVE, PAULI
from .propagator import PRECONDITIONERS, SolverConfig

FULL = "full"
REDUCED = "reduced"
TRANSVERSE_BOX_WIDTHS = 14.0
SPECIES_MASS = {"Rb87": RB87_MASS}


@dataclass
class Geometry:
    Nx: int = 24
    Ny: int = 24
    Nz: int = 1000
    Lx: float | None = None
    Ly: float | None = None
    Lz: float | None = None


@dataclass
class Physics:
    omega: float = 1.0
    L: float = 10.0
    theta: float = 0.0
    phi: float = 0.0
    spin_mode: str = SCALAR
    d: float = 1.0


@dataclass
class Detector:
    kind: str = ABC_SPINLESS
    kappa: float = math.pi
    profile: str = "tanh"
    z0: float = 10.0
    a: float = 0.165
    w: float = 1.0
    W_max: float = 40.0


@dataclass
class Numerics:
    mode: str = REDUCED
    dt: float = 1e-3
    t_cutoff: float = 20.0
    rel_tol: float = 1e-8
    restart: int = 30
    max_iter: int = 1000
    preconditioner: str = "none"
    cfl: float = 0.8
    n_trajectories: int = 0
    seed: int = 0
    guidance: str = CONVECTIVE
    guidance_field: str = "post"
    checkpoints: list = field(default_factory=list)


@dataclass
class Outputs:
    directory: str = "out"
    snapshot_times: list = field(default_factory=list)
    bins: int = 200


@dataclass
class SI:
    d_phys: float | None = None
    species: str = "Rb87"
    mass: float | None = None

    @property
    def enabled(self) -> bool:
        return self.d_phys is not None

    @property
    def mass_kg(self) -> float:
        if self.mass is not None:
            return self.mass
        if self.species not in SPECIES_MASS:
            raise ConfigError(f"unknown species {self.species!r}; give si.mass in kg")
        return SPECIES_MASS[self.species]


_SECTIONS = {
    "geometry": Geometry,
    "physics": Physics,
    "detector": Detector,
    "numerics": Numerics,
    "outputs": Outputs,
    "si": SI,
}


@dataclass
class RunConfig:
    geometry: Geometry = field(default_factory=Geometry)
    physics: Physics = field(default_factory=Physics)
    detector: Detector = field(default_factory=Detector)
    numerics: Numerics = field(default_factory=Numerics)
    outputs: Outputs = field(default_factory=Outputs)
    si: SI = field(default_factory=SI)

    # ------------------------------------------------------------------ build
    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = set(data) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        parts = {}
        for name, typ in _SECTIONS.items():
            section = data.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"section [{name}] must be a table")
            known = {f.name for f in fields(typ)}
            bad = set(section) - known
            if bad:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
            parts[name] = typ(**section)
        cfg = cls(**parts)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_value(self, axis: str, value) -> "RunConfig":
        """Copy with one sweepable scalar replaced."""
        sections = {"omega": "physics", "theta": "physics", "w": "detector", "kappa": "detector"}
        if axis not in sections:
            raise ConfigError(f"cannot sweep {axis!r}; choose one of {sorted(sections)}")
        sec = sections[axis]
        new = replace(self, **{sec: replace(getattr(self, sec), **{axis: float(value)})})
        new.validate()
        return new

    # ------------------------------------------------------------- validation
    def validate(self) -> None:
        g, p, d, n = self.geometry, self.physics, self.detector, self.numerics
        if d.kind not in DETECTOR_KINDS:
            raise ConfigError(f"detector.kind must be one of {DETECTOR_KINDS}")
        if p.spin_mode not in (SCALAR, SPINOR):
            raise ConfigError("physics.spin_mode must be 'scalar' or 'spinor'")
        if n.mode not in (FULL, REDUCED):
            raise ConfigError("numerics.mode must be 'full' or 'reduced'")
        if d.kind == ABC_SPINOR and p.spin_mode != SPINOR:
            raise ConfigError("the spinor ABC requires physics.spin_mode = 'spinor'")
        if d.kind == ABC_SPINOR and n.mode != FULL:
            raise ConfigError("the spinor ABC couples z to x and y; it needs numerics.mode = 'full'")
        if d.kind == NO_DETECTOR and n.mode != REDUCED:
            raise ConfigError("detector-free runs are only available in reduced mode")
        if n.guidance not in (CONVECTIVE, PAULI):
            raise ConfigError("numerics.guidance must be 'convective' or 'pauli'")
        if n.guidance == PAULI and p.spin_mode != SPINOR:
            raise ConfigError("Pauli guidance requires physics.spin_mode = 'spinor'")
        if n.guidance_field not in ("post", "pre"):
            raise ConfigError("numerics.guidance_field must be 'post' or 'pre'")
        if n.preconditioner not in PRECONDITIONERS:
            raise ConfigError(f"numerics.preconditioner must be one of {PRECONDITIONERS}")
        if not 0 < n.cfl < 1:
            raise ConfigError("numerics.cfl must lie in (0, 1)")
        if not n.t_cutoff > 0:
            raise ConfigError("numerics.t_cutoff must be positive")
        if n.n_trajectories < 0:
            raise ConfigError("numerics.n_trajectories must be non-negative")
        if self.outputs.bins < 1:
            raise ConfigError("outputs.bins must be at least 1")
        if d.kind == CAP and not d.z0 < p.L:
            raise ConfigError("CAP onset detector.z0 must lie below physics.L")
        if n.mode == FULL and g.Lz is not None and d.kind == CAP and not d.z0 < g.Lz:
            raise ConfigError("CAP onset detector.z0 must lie below geometry.Lz")
        try:
            self.solver_config()
            self.physics_config()
            self.detector_model()
            if n.mode == FULL:
                self.grid()
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        if self.si.enabled:
            if not self.si.d_phys > 0:
                raise ConfigError("si.d_phys must be positive")
            _ = self.si.mass_kg

    # ---------------------------------------------------------- domain views
    def detector_model(self) -> DetectorModel:
        d = self.detector
        return DetectorModel(d.kind, d.kappa, d.profile, d.z0, d.a, d.w, d.W_max)

    def physics_config(self) -> PhysicsConfig:
        p = self.physics
        spinor = BlochSpinor(p.theta, p.phi) if p.spin_mode == SPINOR else None
        return PhysicsConfig(p.omega, p.L, spinor, p.d)

    def bloch(self) -> BlochSpinor:
        return BlochSpinor(self.physics.theta, self.physics.phi)

    def solver_config(self) -> SolverConfig:
        n = self.numerics
        return SolverConfig(n.dt, n.rel_tol, n.restart, n.max_iter, n.preconditioner)

    def grid(self) -> GridSpec:
        """Full-grid geometry with defaults resolved.

        Lateral widths default to 14 guide widths. ``Lz`` defaults to the
        value putting the last node (counting plane) at ``L`` for ABC kinds
        and to ``L`` itself for a CAP.
        """
        g, p = self.geometry, self.physics
        if not p.omega > 0:
            raise ConfigError("full runs need omega > 0")
        width = TRANSVERSE_BOX_WIDTHS / math.sqrt(p.omega)
        Lx = g.Lx if g.Lx is not None else width
        Ly = g.Ly if g.Ly is not None else width
        if g.Lz is not None:
            Lz = g.Lz
        elif self.detector.kind in (ABC_SPINLESS, ABC_SPINOR):
            Lz = p.L * g.Nz / (g.Nz - 1)
        else:
            Lz = p.L
        return GridSpec(Lx, Ly, Lz, g.Nx, g.Ny, g.Nz)

    @property
    def output_dir(self) -> Path:
        return Path(self.outputs.directory)
