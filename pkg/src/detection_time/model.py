"""Physical configuration: spinors, detector models, initial state, units.

Internal units fix hbar = m = d = 1; SI conversion happens only at the I/O
boundary through :func:`to_si`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import constants

from .errors import ConfigError, ModeError
from .grid import SCALAR, SPINOR, GridSpec, SpinorField

CAP = "cap"
ABC_SPINLESS = "abc_spinless"
ABC_SPINOR = "abc_spinor"
NO_DETECTOR = "none"
DETECTOR_KINDS = (CAP, ABC_SPINLESS, ABC_SPINOR, NO_DETECTOR)

CAP_PROFILES = ("tanh", "sharp", "cubic_ramp")

RB87_MASS = 86.909180527 * constants.atomic_mass

WALL_AMPLITUDE_LIMIT = 1e-8


class LeakWarning(UserWarning):
    """Transverse Gaussian not well contained in the lateral box."""


@dataclass(frozen=True)
class BlochSpinor:
    theta: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.theta <= math.pi:
            raise ConfigError("theta must lie in [0, pi]")
        if not 0.0 <= self.phi < 2.0 * math.pi:
            raise ConfigError("phi must lie in [0, 2pi)")

    @property
    def components(self) -> tuple[complex, complex]:
        return (
            complex(math.cos(self.theta / 2.0)),
            math.sin(self.theta / 2.0) * complex(math.cos(self.phi), math.sin(self.phi)),
        )

    @property
    def bloch_vector(self) -> np.ndarray:
        """Unit vector <chi|sigma|chi> with spherical angles (theta, phi)."""
        st = math.sin(self.theta)
        return np.array([st * math.cos(self.phi), st * math.sin(self.phi), math.cos(self.theta)])


@dataclass(frozen=True)
class DetectorModel:
    """Tagged detector choice.

    ``kappa`` is used by the two ABC kinds; ``profile``, ``z0``, ``a``, ``w``
    and ``W_max`` by the CAP kind. ``a`` is the tanh smoothing width and ``w``
    the cubic-ramp width as a fraction of ``L - z0``.
    """

    kind: str
    kappa: float = math.pi
    profile: str = "tanh"
    z0: float = 10.0
    a: float = 0.165
    w: float = 1.0
    W_max: float = 40.0

    def __post_init__(self):
        if self.kind not in DETECTOR_KINDS:
            raise ConfigError(f"unknown detector kind {self.kind!r}")
        if self.is_abc and not self.kappa > 0:
            raise ConfigError("kappa must be positive")
        if self.kind == CAP:
            if self.profile not in CAP_PROFILES:
                raise ConfigError(f"unknown CAP profile {self.profile!r}")
            if not self.W_max > 0:
                raise ConfigError("W_max must be positive")
            if not self.z0 > 0:
                raise ConfigError("z0 must be positive")
            if self.profile == "tanh" and not self.a > 0:
                raise ConfigError("a must be positive")
            if self.profile == "cubic_ramp" and not 0 < self.w <= 1:
                raise ConfigError("w must lie in (0, 1]")

    @property
    def is_abc(self) -> bool:
        return self.kind in (ABC_SPINLESS, ABC_SPINOR)

    @property
    def is_cap(self) -> bool:
        return self.kind == CAP

    def validate_for(self, Lz: float) -> None:
        if self.kind == CAP and not self.z0 < Lz:
            raise ConfigError(f"CAP onset z0={self.z0} must lie below Lz={Lz}")


@dataclass(frozen=True)
class PhysicsConfig:
    omega: float
    L: float
    spinor: BlochSpinor | None = None
    d: float = 1.0
    mass: float = 1.0
    hbar: float = 1.0

    def __post_init__(self):
        if self.omega < 0:
            raise ConfigError("omega must be non-negative")
        if not self.L > self.d:
            raise ConfigError("detector distance L must exceed the slab width d")

    @property
    def spin_mode(self) -> str:
        return SCALAR if self.spinor is None else SPINOR

    @property
    def transverse_width(self) -> float:
        return math.sqrt(self.hbar / (self.mass * self.omega))


def cap_profile(z, model: DetectorModel, L: float):
    """Absorption strength W(z) >= 0 of a CAP detector ending at ``L``."""
    if model.kind != CAP:
        raise ModeError("cap_profile needs a CAP detector")
    z = np.asarray(z, dtype=float)
    if model.profile == "tanh":
        W = (1.0 + np.tanh((z - model.z0) / model.a)) * model.W_max / 2.0
    elif model.profile == "sharp":
        W = np.where((z > model.z0) & (z < L), model.W_max, 0.0)
    else:
        s = np.clip((z - model.z0) / ((L - model.z0) * model.w), 0.0, 1.0)
        W = s**3 * model.W_max
    return W


def transverse_ground_state(x, y, grid: GridSpec, physics: PhysicsConfig):
    """Normalised ground state g(x, y) of the harmonic guide, centred in the box."""
    mw = physics.mass * physics.omega / physics.hbar
    r2 = (x - grid.Lx / 2.0) ** 2 + (y - grid.Ly / 2.0) ** 2
    return math.sqrt(mw / math.pi) * np.exp(-mw * r2 / 2.0)


def longitudinal_profile(z, physics: PhysicsConfig):
    """sqrt(2/d) sin(pi z/d) on the slab 0 < z < d, zero elsewhere."""
    z = np.asarray(z, dtype=float)
    d = physics.d
    inside = (z > 0.0) & (z < d)
    return np.where(inside, math.sqrt(2.0 / d) * np.sin(np.pi * z / d), 0.0)


def check_transverse_containment(grid: GridSpec, physics: PhysicsConfig, strict: bool = False) -> float:
    """Warn (or raise when ``strict``) if the guide Gaussian reaches the walls.

    Returns the wall-to-peak amplitude ratio of the transverse profile.
    """
    sigma = physics.transverse_width
    half_box = min(grid.Lx, grid.Ly) / 2.0
    x, y = grid.x, grid.y
    gx = np.exp(-physics.mass * physics.omega * (x - grid.Lx / 2.0) ** 2 / (2.0 * physics.hbar))
    gy = np.exp(-physics.mass * physics.omega * (y - grid.Ly / 2.0) ** 2 / (2.0 * physics.hbar))
    ratio = float(max(gx[0], gx[-1], gy[0], gy[-1]) / (gx.max() * gy.max()))
    problems = []
    if 6.0 * sigma > half_box:
        problems.append(f"6*sigma={6 * sigma:.3g} exceeds half box {half_box:.3g}")
    if ratio > WALL_AMPLITUDE_LIMIT:
        problems.append(f"wall amplitude ratio {ratio:.2e} above {WALL_AMPLITUDE_LIMIT:g}")
    if problems:
        msg = "transverse Gaussian leaks to the lateral walls: " + "; ".join(problems)
        if strict:
            raise ConfigError(msg)
        warnings.warn(msg, LeakWarning, stacklevel=2)
    return ratio


def initial_state(
    grid: GridSpec,
    physics: PhysicsConfig,
    normalize: bool = True,
    strict: bool = False,
) -> SpinorField:
    """Guide ground state times the slab ground state, sampled on the nodes.

    Dirichlet boundary nodes (x and y faces, z = 0) are set to exactly zero.
    With ``normalize`` the result has unit discrete norm; otherwise the raw
    samples of the continuum-normalised function are returned.
    """
    if physics.omega <= 0:
        raise ConfigError("the transverse ground state needs omega > 0")
    if physics.d > grid.z_roof:
        raise ConfigError("slab width d exceeds the z extent of the grid")
    check_transverse_containment(grid, physics, strict=strict)

    gx = transverse_ground_state(grid.x[:, None], grid.y[None, :], grid, physics)
    gx[0, :] = gx[-1, :] = 0.0
    gx[:, 0] = gx[:, -1] = 0.0
    fz = longitudinal_profile(grid.z, physics)
    fz[0] = 0.0
    psi = (gx[:, :, None] * fz[None, None, :]).reshape(-1).astype(complex)

    if normalize:
        psi /= math.sqrt(np.sum(np.abs(psi) ** 2) * grid.cell_volume)

    if physics.spinor is None:
        return SpinorField(grid, psi, None, SCALAR)
    cu, cd = physics.spinor.components
    return SpinorField(grid, cu * psi, cd * psi, SPINOR)


_SI_KINDS = ("length", "time", "frequency", "kappa")


def time_unit(d_phys: float, m_phys: float) -> float:
    """Natural time unit m d^2 / hbar in seconds."""
    return m_phys * d_phys**2 / constants.hbar


def to_si(value, kind: str, d_phys: float, m_phys: float = RB87_MASS):
    """Convert a dimensionless quantity to SI units.

    ``kind`` is one of ``length`` (m), ``time`` (s), ``frequency`` (rad/s) or
    ``kappa`` (1/m).
    """
    if kind not in _SI_KINDS:
        raise ValueError(f"unknown quantity kind {kind!r}; expected one of {_SI_KINDS}")
    if not (d_phys > 0 and m_phys > 0):
        raise ValueError("d_phys and m_phys must be positive")
    T = time_unit(d_phys, m_phys)
    if kind == "length":
        return value * d_phys
    if kind == "time":
        return value * T
    if kind == "frequency":
        return value / T
    return value / d_phys
