"""Reduced 1D solvers used as oracles and comparison curves.

For CAP and spinless-ABC detectors the transverse motion decouples, so the
detection-time density follows from the z-problem alone. The same stencils
and Crank-Nicolson scheme as the 3D solver are used; the 1D linear systems
are tridiagonal and solved with a sparse LU factorisation.

``rho_free`` computes the flux through z = L without any detector. The
computational half-line is [0, box_factor * L]; its outer half carries a
smooth cubic absorbing sponge, so nothing is reflected back towards the
probe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bohmian import (
    DEFAULT_CFL,
    FactorizedGuidance,
    TrajectoryEnsemble,
    TrajectoryObserver,
    sample_positions,
)
from .errors import ConfigError, OracleInvalid
from .model import CAP, NO_DETECTOR, BlochSpinor, DetectorModel, cap_profile
from .observables import PAULI, DetectionSeries, halfstep_to_nodes, normloss_density
from .operators import DIRICHLET_BOTH, ROBIN_TOP, assemble_laplacian_1d

FAR_WALL_THRESHOLD = 1e-8
FREE_DENSITY_FLOOR = -1e-6
SPONGE_STRENGTH = 20.0


@dataclass
class Line1DProblem:
    """Crank-Nicolson problem on nodes z_k = k*hz, k = 0..Nz-1.

    ``top`` is ``"dirichlet"`` or ``"robin"``; ``W`` (length Nz) is an optional
    absorbing potential; ``detector`` (optional) supplies the analytic CAP
    profile for trajectory absorption and the model density.
    """

    Nz: int
    hz: float
    dt: float
    top: str = "dirichlet"
    kappa: float = 0.0
    W: np.ndarray | None = None
    d: float = 1.0
    detector: DetectorModel | None = None
    L: float | None = None

    def __post_init__(self):
        if self.Nz < 4:
            raise ConfigError("Nz must be at least 4")
        if not (self.hz > 0 and self.dt > 0):
            raise ConfigError("hz and dt must be positive")
        if self.top not in ("dirichlet", "robin"):
            raise ConfigError(f"unknown top boundary {self.top!r}")
        if self.top == "robin" and not self.kappa > 0:
            raise ConfigError("a Robin top needs kappa > 0")
        if self.d >= (self.Nz - 1) * self.hz:
            raise ConfigError("slab width exceeds the line")
        if self.W is not None:
            self.W = np.asarray(self.W, dtype=float)
            if self.W.shape != (self.Nz,):
                raise ConfigError("W must have one value per node")

    @classmethod
    def for_detector(cls, detector: DetectorModel, L: float, Nz: int, dt: float, d: float = 1.0):
        """Reduced problem of a detector ending at height ``L``.

        For an ABC the last node (counting plane) sits exactly at ``L``; for a
        CAP the line is [0, L) with the usual node convention.
        """
        if detector.kind == NO_DETECTOR:
            raise ConfigError("use rho_free for detector-free runs")
        if detector.is_abc:
            return cls(Nz, L / (Nz - 1), dt, "robin", detector.kappa, None, d, detector, L)
        detector.validate_for(L)
        hz = L / Nz
        W = np.asarray(cap_profile(np.arange(Nz) * hz, detector, L), dtype=float).copy()
        W[0] = W[-1] = 0.0
        return cls(Nz, hz, dt, "dirichlet", 0.0, W, d, detector, L)

    @property
    def z(self) -> np.ndarray:
        return np.arange(self.Nz) * self.hz

    @property
    def roof(self) -> float:
        return (self.Nz - 1) * self.hz

    def hamiltonian(self) -> sp.csr_matrix:
        face = ROBIN_TOP if self.top == "robin" else DIRICHLET_BOTH
        H = assemble_laplacian_1d(self.Nz, self.hz, face, self.kappa).matrix
        if self.W is not None:
            H = H - 1j * sp.diags(self.W)
        return sp.csr_matrix(H)

    def initial(self) -> np.ndarray:
        z = self.z
        inside = (z > 0) & (z < self.d)
        psi = np.where(inside, np.sin(np.pi * z / self.d), 0.0).astype(complex)
        return psi / math.sqrt(np.sum(np.abs(psi) ** 2) * self.hz)

    def norm_sq(self, psi) -> float:
        return float(np.sum(np.abs(psi) ** 2) * self.hz)

    def model_density(self, psi) -> float | None:
        if self.top == "robin":
            return float(self.kappa * abs(psi[-1]) ** 2)
        if self.W is not None and self.detector is not None and self.detector.kind == CAP:
            return float(2.0 * np.dot(self.W, np.abs(psi) ** 2) * self.hz)
        return None

    def cap_function(self):
        if self.detector is None or self.detector.kind != CAP:
            return None
        det, L = self.detector, self.L
        return lambda z: cap_profile(z, det, L)


@dataclass
class Line1DResult:
    series: DetectionSeries
    psi: np.ndarray
    problem: Line1DProblem


def evolve_1d(problem: Line1DProblem, t_cutoff: float, observers=()) -> Line1DResult:
    """Crank-Nicolson evolution of the line problem up to ``t_cutoff``.

    Observers are called as ``obs(t_n, psi_n, psi_{n+1})`` with 1D arrays.
    """
    if not t_cutoff > 0:
        raise ValueError("t_cutoff must be positive")
    H = problem.hamiltonian()
    n = problem.Nz
    eye = sp.identity(n, dtype=complex, format="csc")
    half = 0.5j * problem.dt * H
    lu = spla.splu(sp.csc_matrix(eye + half))
    B = sp.csr_matrix(eye - half)

    steps = int(math.floor(t_cutoff / problem.dt + 1e-9))
    psi = problem.initial()
    norms = np.empty(steps + 1)
    norms[0] = problem.norm_sq(psi)
    half_model = np.empty(steps)
    has_model = problem.model_density(psi) is not None
    for k in range(steps):
        new = lu.solve(B @ psi)
        norms[k + 1] = problem.norm_sq(new)
        if has_model:
            half_model[k] = problem.model_density(0.5 * (psi + new))
        for obs in observers:
            obs(k * problem.dt, psi, new)
        psi = new
    times = np.arange(steps + 1) * problem.dt
    model = halfstep_to_nodes(half_model) if has_model else None
    kind = problem.detector.kind if problem.detector is not None else ""
    series = DetectionSeries.from_norms(times, norms, model, kind, steps * problem.dt)
    return Line1DResult(series, psi, problem)


def sponge_profile(z: np.ndarray, start: float, end: float, strength: float = SPONGE_STRENGTH) -> np.ndarray:
    s = np.clip((z - start) / (end - start), 0.0, 1.0)
    return strength * s**3


def free_problem(L: float, dt: float, hz: float, box_factor: float = 4.0, sponge: float = SPONGE_STRENGTH,
                 d: float = 1.0) -> Line1DProblem:
    length = box_factor * L
    Nz = int(round(length / hz))
    z = np.arange(Nz) * hz
    W = sponge_profile(z, 0.5 * length, length, sponge)
    W[0] = W[-1] = 0.0
    return Line1DProblem(Nz, hz, dt, "dirichlet", 0.0, W, d, None, L)


@dataclass
class FreeCurve:
    times: np.ndarray
    flux: np.ndarray
    normloss: np.ndarray
    far_wall_max: float
    box_length: float
    probe: float

    @property
    def route_error(self) -> float:
        """L-infinity gap between the flux and probability-loss routes over the peak."""
        return float(np.max(np.abs(self.flux - self.normloss)) / np.max(np.abs(self.flux)))

    @property
    def integral(self) -> float:
        return float(np.trapezoid(self.flux, self.times))


@dataclass
class _FreeRecorder:
    p: int
    hz: float
    flux_half: list = field(default_factory=list)
    inside: list = field(default_factory=list)
    far: float = 0.0

    def inside_prob(self, psi):
        rho = np.abs(psi[: self.p + 1]) ** 2
        return float((rho[:-1].sum() + 0.5 * rho[-1]) * self.hz)

    def __call__(self, t, psi, new):
        if not self.inside:
            self.inside.append(self.inside_prob(psi))
        m = 0.5 * (psi + new)
        p = self.p
        j = np.imag(np.conj(m[p]) * (m[p + 1] - m[p - 1]) / (2.0 * self.hz))
        self.flux_half.append(float(j))
        self.inside.append(self.inside_prob(new))
        self.far = max(self.far, float(abs(new[-2]) ** 2 * self.hz))


def rho_free(L: float, t_cutoff: float, hz: float = 0.01, dt: float = 1e-3, box_factor: float = 4.0,
             far_threshold: float = FAR_WALL_THRESHOLD, sponge: float = SPONGE_STRENGTH) -> FreeCurve:
    """Flux through z = L of the detector-free evolution, with validity checks.

    Raises :class:`OracleInvalid` when the probability in the last cell before
    the far wall exceeds ``far_threshold`` or the flux turns negative beyond
    discretisation noise.
    """
    prob = free_problem(L, dt, hz, box_factor, sponge)
    p = int(round(L / hz))
    if abs(p * hz - L) > 1e-9 * L:
        raise ConfigError("probe height must be a multiple of hz")
    rec = _FreeRecorder(p, hz)
    res = evolve_1d(prob, t_cutoff, observers=[rec])
    times = res.series.times
    flux = halfstep_to_nodes(np.array(rec.flux_half))
    normloss = normloss_density(times, np.array(rec.inside))
    if rec.far > far_threshold:
        raise OracleInvalid(f"far-wall cell probability {rec.far:.2e} exceeds {far_threshold:.1e}")
    if flux.min() < FREE_DENSITY_FLOOR:
        raise OracleInvalid(f"free flux dips to {flux.min():.2e}; returning flux suspected")
    return FreeCurve(times, flux, normloss, rec.far, prob.Nz * hz, L)


@dataclass
class FreeArrivals:
    tau: np.ndarray
    fraction: float
    ensemble: TrajectoryEnsemble


def free_bohmian_arrivals(L: float, theta: float, omega: float, n: int, t_cutoff: float, seed: int = 0,
                          hz: float = 0.02, dt: float = 1e-3, box_factor: float = 4.0,
                          cfl: float = DEFAULT_CFL, phi: float = 0.0) -> FreeArrivals:
    """Pauli-guided first arrivals at z = L with no detector present.

    The spin state is the product ``chi(theta, phi) g(x, y) psi(z, t)``, so
    only the 1D z-profile is evolved. This is a validation scenario for the
    trajectory machinery, not a detector model.
    """
    prob = free_problem(L, dt, hz, box_factor)
    s = BlochSpinor(theta, phi).bloch_vector
    pos, xi = sample_positions(n, omega, prob.d, seed, offset=0.5 * hz)
    ens = TrajectoryEnsemble(pos, xi, PAULI, seed)
    z = prob.z

    def factory(psi_z):
        return FactorizedGuidance(z, psi_z, omega, PAULI, s)

    obs = TrajectoryObserver(ens, factory, dt, hz, hz, plane=L, cfl=cfl)
    evolve_1d(prob, t_cutoff, observers=[obs])
    ens.time_out()
    return FreeArrivals(ens.arrival_times(), ens.fraction_detected(), ens)
