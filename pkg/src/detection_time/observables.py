"""Probability currents, detection-time densities and their summaries.

Two estimates of the detection-time density are produced for every run:

* ``rho_T_normloss``: ``-d||Psi||^2/dt`` from centred differences of the norm
  history (one-sided at the ends);
* ``rho_T_model``: the model-specific expression, i.e. ``kappa * roof
  probability`` for absorbing boundary conditions or ``2 * sum W |Psi|^2`` for
  absorbing potentials.

Crank-Nicolson conserves ``||psi_{n+1}||^2 - ||psi_n||^2 = -2 dt <m, Gamma m>``
exactly with ``m = (psi_n + psi_{n+1})/2``, so the model density is evaluated
on that time-centred field and averaged onto the stored steps.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ModeError
from .grid import GridSpec, SpinorField, grad_component
from .model import CAP, NO_DETECTOR, DetectorModel, cap_profile

EPS_NUM = 1e-6
CONVECTIVE = "convective"
PAULI = "pauli"


@dataclass
class CurrentField:
    jx: np.ndarray
    jy: np.ndarray
    jz: np.ndarray
    kind: str = CONVECTIVE

    def component(self, axis: str) -> np.ndarray:
        return {"x": self.jx, "y": self.jy, "z": self.jz}[axis]

    def stacked(self) -> np.ndarray:
        return np.stack([self.jx, self.jy, self.jz])


def convective_current(psi: SpinorField, hbar: float = 1.0, mass: float = 1.0) -> CurrentField:
    """(hbar/m) Im(Psi^dagger grad Psi), summed over spin components."""
    grid = psi.grid
    out = []
    for axis in "xyz":
        acc = np.zeros(grid.size)
        for comp in psi.components():
            acc += np.imag(np.conj(comp) * grad_component(comp, axis, grid))
        out.append(hbar / mass * acc)
    return CurrentField(*out, kind=CONVECTIVE)


def spin_density(psi: SpinorField) -> np.ndarray:
    """Psi^dagger sigma Psi as an array of shape (3, N)."""
    if not psi.is_spinor:
        raise ModeError("spin density needs a spinor field")
    cross = np.conj(psi.up) * psi.down
    return np.stack([2.0 * cross.real, 2.0 * cross.imag, np.abs(psi.up) ** 2 - np.abs(psi.down) ** 2])


def curl(fx, fy, fz, grid: GridSpec):
    d = grad_component
    return (
        d(fz, "y", grid) - d(fy, "z", grid),
        d(fx, "z", grid) - d(fz, "x", grid),
        d(fy, "x", grid) - d(fx, "y", grid),
    )


def pauli_current(psi: SpinorField, hbar: float = 1.0, mass: float = 1.0) -> CurrentField:
    """Convective current plus (hbar/2m) curl(Psi^dagger sigma Psi)."""
    if not psi.is_spinor:
        raise ModeError("the Pauli current needs a spinor field")
    jc = convective_current(psi, hbar, mass)
    S = spin_density(psi)
    cx, cy, cz = curl(S[0], S[1], S[2], psi.grid)
    f = hbar / (2.0 * mass)
    return CurrentField(jc.jx + f * cx, jc.jy + f * cy, jc.jz + f * cz, kind=PAULI)


def current(psi: SpinorField, kind: str, hbar: float = 1.0, mass: float = 1.0) -> CurrentField:
    if kind == CONVECTIVE:
        return convective_current(psi, hbar, mass)
    if kind == PAULI:
        return pauli_current(psi, hbar, mass)
    raise ValueError(f"unknown current kind {kind!r}")


def layer_integrals(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Integral over each constant-z layer (length Nz)."""
    return np.asarray(values).reshape(grid.shape).sum(axis=(0, 1)) * grid.hx * grid.hy


def rho_T_flux(psi: SpinorField, detector: DetectorModel, hbar: float = 1.0, mass: float = 1.0) -> float:
    """(hbar kappa/m) times the probability per unit height on the roof layer."""
    if not detector.is_abc:
        raise ModeError("rho_T_flux needs an absorbing boundary condition; use rho_T_capvolume")
    grid = psi.grid
    roof = psi.density().reshape(grid.shape)[:, :, -1]
    return float(hbar * detector.kappa / mass * roof.sum() * grid.hx * grid.hy)


def cap_on_grid(grid: GridSpec, detector: DetectorModel) -> np.ndarray:
    """W(z) at the z nodes, zero on the two Dirichlet end nodes."""
    W = np.asarray(cap_profile(grid.z, detector, grid.Lz), dtype=float).copy()
    W[0] = W[-1] = 0.0
    return W


def rho_T_capvolume(psi: SpinorField, detector: DetectorModel, hbar: float = 1.0) -> float:
    """(2/hbar) sum W |Psi|^2 over the grid."""
    if detector.kind != CAP:
        raise ModeError("rho_T_capvolume needs a CAP detector; use rho_T_flux")
    grid = psi.grid
    W = cap_on_grid(grid, detector)
    layer = psi.density().reshape(grid.shape).sum(axis=(0, 1))
    return float(2.0 / hbar * np.dot(W, layer) * grid.cell_volume)


def normloss_density(times: np.ndarray, norm_sq: np.ndarray) -> np.ndarray:
    """-d||Psi||^2/dt, centred inside and one-sided at both ends."""
    times = np.asarray(times, dtype=float)
    if len(times) < 2:
        return np.zeros(len(times))
    return -np.gradient(np.asarray(norm_sq, dtype=float), times, edge_order=1)


def halfstep_to_nodes(half: np.ndarray) -> np.ndarray:
    """Map values at t_{n+1/2} (length S) onto t_n (length S+1).

    Interior nodes take the mean of the two neighbouring half-steps; the two
    end nodes take their single neighbour.
    """
    half = np.asarray(half, dtype=float)
    if half.size == 0:
        return np.zeros(1)
    out = np.empty(half.size + 1)
    out[0] = half[0]
    out[-1] = half[-1]
    out[1:-1] = 0.5 * (half[1:] + half[:-1])
    return out


def restricted_mean(times, rho, t_cutoff: float) -> float:
    """E[min(T, t_cutoff)] = int t rho dt + t_cutoff (1 - int rho dt) on [0, t_cutoff]."""
    times = np.asarray(times, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if times[-1] < t_cutoff - 1e-9 * max(1.0, t_cutoff):
        raise ValueError("series does not reach t_cutoff")
    keep = times <= t_cutoff + 1e-12 * max(1.0, t_cutoff)
    t, r = times[keep], rho[keep]
    mass = np.trapezoid(r, t)
    first = np.trapezoid(t * r, t)
    return float(first + t_cutoff * (1.0 - mass))


def histogram(samples, n_total: int, bins: int = 200, range: tuple | None = None):
    """Histogram of arrival times normalised to the detected fraction.

    The bar areas sum to ``(samples inside range) / n_total``. Returns
    ``(edges, heights)``.
    """
    if bins < 1:
        raise ValueError("bins must be at least 1")
    if n_total < 1:
        raise ValueError("n_total must be positive")
    samples = np.asarray(samples, dtype=float)
    if range is None:
        if samples.size == 0:
            raise ValueError("empty sample needs an explicit range")
        range = (float(samples.min()), float(samples.max()))
    lo, hi = range
    if not hi > lo:
        raise ValueError("histogram range is empty")
    counts, edges = np.histogram(samples, bins=bins, range=(lo, hi))
    heights = counts / (n_total * np.diff(edges))
    return edges, heights


@dataclass
class DetectionSeries:
    times: np.ndarray
    norm_sq: np.ndarray
    rho_T_normloss: np.ndarray
    rho_T_model: np.ndarray | None = None
    model_kind: str = ""
    t_cutoff: float | None = None

    def __post_init__(self):
        if self.t_cutoff is None:
            self.t_cutoff = float(self.times[-1])

    @classmethod
    def from_norms(cls, times, norm_sq, rho_model=None, model_kind="", t_cutoff=None):
        times = np.asarray(times, dtype=float)
        norm_sq = np.asarray(norm_sq, dtype=float)
        return cls(times, norm_sq, normloss_density(times, norm_sq),
                   None if rho_model is None else np.asarray(rho_model, dtype=float), model_kind, t_cutoff)

    @property
    def cum_fraction(self) -> np.ndarray:
        return self.norm_sq[0] - self.norm_sq

    @property
    def detection_fraction(self) -> float:
        return float(self.cum_fraction[-1])

    @property
    def rho_T(self) -> np.ndarray:
        return self.rho_T_model if self.rho_T_model is not None else self.rho_T_normloss

    @property
    def mu_star(self) -> float:
        return restricted_mean(self.times, self.rho_T, self.t_cutoff)

    def dual_route_error(self) -> float:
        """max |normloss - model| relative to the peak of the model density.

        Returns the absolute gap when the model density vanishes identically.
        """
        if self.rho_T_model is None:
            raise ModeError("no model density recorded")
        gap = float(np.max(np.abs(self.rho_T_normloss - self.rho_T_model)))
        peak = float(np.max(np.abs(self.rho_T_model)))
        return gap / peak if peak > 0 else gap

    def min_density(self) -> float:
        return float(min(self.rho_T_normloss.min(), self.rho_T.min()))

    def write_csv(self, path, tag: str | None = None) -> None:
        model = self.rho_T_model if self.rho_T_model is not None else np.full(len(self.times), np.nan)
        cum = self.cum_fraction
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["t", "norm_sq", "rho_T_normloss", "rho_T_model", "cum_fraction"]
            if tag is not None:
                header.append("model")
            w.writerow(header)
            for i in np.arange(len(self.times)):
                row = [repr(float(v)) for v in (self.times[i], self.norm_sq[i], self.rho_T_normloss[i], model[i], cum[i])]
                if tag is not None:
                    row.append(tag)
                w.writerow(row)


@dataclass
class DetectionRecorder:
    """Propagation observer collecting the model density at half steps."""

    detector: DetectorModel
    hbar: float = 1.0
    mass: float = 1.0
    half_values: list = field(default_factory=list)

    def __post_init__(self):
        if self.detector.kind == NO_DETECTOR:
            raise ConfigError("no detection density without a detector")

    def _density(self, psi: SpinorField) -> float:
        if self.detector.is_abc:
            return rho_T_flux(psi, self.detector, self.hbar, self.mass)
        return rho_T_capvolume(psi, self.detector, self.hbar)

    def __call__(self, t, psi_old: SpinorField, psi_new: SpinorField) -> None:
        self.half_values.append(self._density(psi_old.midpoint(psi_new)))

    def series(self, norms, t_cutoff: float | None = None) -> DetectionSeries:
        """Combine with the propagator's NormSeries."""
        model = halfstep_to_nodes(np.array(self.half_values))
        n = len(norms.times)
        if len(model) != n:
            raise ValueError("recorder and norm history have different lengths")
        return DetectionSeries.from_norms(norms.times, norms.norm_sq, model, self.detector.kind, t_cutoff)
