"""Bohmian trajectory ensembles: sampling, guidance, RK2 and arrival records.

Two guidance sources are supported:

* :class:`GridGuidance` interpolates a current computed on the full 3D grid;
* :class:`FactorizedGuidance` handles product states
  ``chi * g(x, y) * psi(z, t)`` with the guide ground state ``g``. Only the
  1D z-profile is needed, while the transverse parts of the velocity are
  analytic.

Arrivals at a counting plane are found by bracketing each step. Absorption
by a complex potential follows a survival-threshold rule with one uniform
threshold per particle.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .grid import GridSpec, SpinorField, trilinear
from .observables import CONVECTIVE, PAULI, current

ALIVE, ARRIVED, ABSORBED, TIMED_OUT = 0, 1, 2, 3
STATUS_NAMES = {ALIVE: "alive", ARRIVED: "arrived", ABSORBED: "absorbed", TIMED_OUT: "timed_out"}

DENSITY_FLOOR = 1e-6
DEFAULT_CFL = 0.8


@dataclass
class TrajectoryEnsemble:
    positions: np.ndarray
    xi: np.ndarray
    guidance: str = CONVECTIVE
    seed: int = 0
    status: np.ndarray = field(default=None)
    tau: np.ndarray = field(default=None)
    hit: np.ndarray = field(default=None)
    survival: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.positions)
        self.positions = np.asarray(self.positions, dtype=float).reshape(n, 3)
        if self.status is None:
            self.status = np.full(n, ALIVE, dtype=np.int8)
        if self.tau is None:
            self.tau = np.full(n, np.nan)
        if self.hit is None:
            self.hit = np.full((n, 3), np.nan)
        if self.survival is None:
            self.survival = np.zeros(n)

    @property
    def size(self) -> int:
        return len(self.positions)

    @property
    def alive(self) -> np.ndarray:
        return np.flatnonzero(self.status == ALIVE)

    def arrival_times(self) -> np.ndarray:
        """Recorded times of particles that arrived or were absorbed."""
        done = (self.status == ARRIVED) | (self.status == ABSORBED)
        return self.tau[done]

    def fraction_detected(self) -> float:
        return float(np.mean((self.status == ARRIVED) | (self.status == ABSORBED)))

    def time_out(self) -> None:
        self.status[self.status == ALIVE] = TIMED_OUT

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["particle_id", "tau", "x", "y", "z", "status"])
            for i in range(self.size):
                where = self.hit[i] if self.status[i] in (ARRIVED, ABSORBED) else self.positions[i]
                w.writerow([i, repr(float(self.tau[i])), *(repr(float(v)) for v in where), STATUS_NAMES[int(self.status[i])]])


def sample_positions(n, omega, d, seed, center=(0.0, 0.0), bounds=None, offset=0.0):
    """Born samples of the guide ground state times 2 sin^2(pi z/d) on (0, d).

    ``bounds`` is ``((xlo, xhi), (ylo, yhi))``; transverse draws outside are
    redrawn. Each particle owns an independent stream spawned from ``seed``,
    so particle ``i`` does not depend on the ensemble size. Returns
    ``(positions, xi)`` with one uniform survival threshold per particle.
    """
    if n < 1:
        raise ValueError("ensemble size must be at least 1")
    if not omega > 0:
        raise ConfigError("Born sampling of the guide ground state needs omega > 0")
    sd = math.sqrt(1.0 / (2.0 * omega))
    pos = np.empty((n, 3))
    xi = np.empty(n)
    children = np.random.SeedSequence(seed).spawn(n)
    for p, child in enumerate(children):
        rng = np.random.default_rng(child)
        for ax in (0, 1):
            while True:
                v = rng.normal(center[ax], sd)
                if bounds is None or bounds[ax][0] <= v <= bounds[ax][1]:
                    break
            pos[p, ax] = v
        while True:
            u, r = rng.uniform(0.0, 1.0), rng.uniform(0.0, 2.0)
            if r < 2.0 * math.sin(math.pi * u) ** 2:
                break
        pos[p, 2] = min(max(u * d, offset), d - offset)
        xi[p] = rng.uniform(0.0, 1.0)
    return pos, xi


def sample_initial(n: int, grid: GridSpec, physics, seed: int, guidance: str = CONVECTIVE) -> TrajectoryEnsemble:
    """Born-distributed ensemble on a full grid, kept half a spacing off the faces."""
    off = 0.5 * grid.h_min
    bounds = ((off, grid.x[-1] - off), (off, grid.y[-1] - off))
    center = (grid.Lx / 2.0, grid.Ly / 2.0)
    pos, xi = sample_positions(n, physics.omega, physics.d, seed, center, bounds, off)
    return TrajectoryEnsemble(pos, xi, guidance, seed)


def cap_velocity(k: np.ndarray, v_max: float) -> np.ndarray:
    """Scale rows of ``k`` so that none exceeds ``v_max`` in length."""
    speed = np.linalg.norm(k, axis=1)
    scale = np.minimum(1.0, v_max / np.maximum(speed, 1e-300))
    return k * scale[:, None]


class GridGuidance:
    """v = j / max(rho, floor * rho_max) from a field on the full grid."""

    def __init__(self, psi: SpinorField, kind: str = CONVECTIVE, hbar: float = 1.0, mass: float = 1.0,
                 floor: float = DENSITY_FLOOR):
        self.grid = psi.grid
        self.j = current(psi, kind, hbar, mass).stacked()
        self.rho = psi.density()
        self.rho_floor = floor * float(self.rho.max())
        g = self.grid
        # Dirichlet nodes carry no density, keep particles on interior nodes
        self.lo = np.array([g.x[1], g.y[1], g.z[1]])
        self.hi = np.array([g.x[-2], g.y[-2], g.z[-1]])

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.lo, self.hi)

    def velocity(self, q: np.ndarray) -> np.ndarray:
        q = np.atleast_2d(q)
        rho = np.maximum(trilinear(self.rho, q, self.grid), self.rho_floor)
        j = np.stack([trilinear(self.j[a], q, self.grid) for a in range(3)], axis=1)
        return j / rho[:, None]


class FactorizedGuidance:
    """Velocity field of the product state chi * g(x, y) * psi(z).

    With ``rho = g^2 |psi|^2``, ``g^2`` proportional to ``exp(-omega r^2)`` and
    ``s`` the Bloch vector of ``chi``, the convective velocity is
    ``(0, 0, j1/rho1)``. The Pauli velocity adds ``(1/2) grad(ln rho) x s``.
    Positions are absolute; ``center`` is the guide axis.
    """

    def __init__(self, z: np.ndarray, psi_z: np.ndarray, omega: float, kind: str = CONVECTIVE,
                 bloch=(0.0, 0.0, 1.0), center=(0.0, 0.0), floor: float = DENSITY_FLOOR,
                 hbar: float = 1.0, mass: float = 1.0):
        if kind not in (CONVECTIVE, PAULI):
            raise ValueError(f"unknown guidance kind {kind!r}")
        self.z = np.asarray(z, dtype=float)
        h = self.z[1] - self.z[0]
        psi = np.asarray(psi_z, dtype=complex)
        dpsi = np.gradient(psi, h, edge_order=1)
        rho1 = np.abs(psi) ** 2
        rho_eps = np.maximum(rho1, floor * rho1.max())
        self.vz = hbar / mass * np.imag(np.conj(psi) * dpsi) / rho_eps
        self.c = 2.0 * np.real(np.conj(psi) * dpsi) / rho_eps
        self.omega = mass * omega / hbar
        self.kind = kind
        self.s = np.asarray(bloch, dtype=float)
        self.center = np.asarray(center, dtype=float)
        self.f = hbar / mass
        self.lo = np.array([-np.inf, -np.inf, self.z[1]])
        self.hi = np.array([np.inf, np.inf, self.z[-1]])

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.lo, self.hi)

    def velocity(self, q: np.ndarray) -> np.ndarray:
        q = np.atleast_2d(q)
        x = q[:, 0] - self.center[0]
        y = q[:, 1] - self.center[1]
        vz = np.interp(q[:, 2], self.z, self.vz)
        v = np.zeros_like(q)
        v[:, 2] = vz
        if self.kind == PAULI:
            c = np.interp(q[:, 2], self.z, self.c)
            sx, sy, sz = self.s
            w = self.omega
            v[:, 0] += self.f * (-w * sz * y - 0.5 * c * sy)
            v[:, 1] += self.f * (w * sz * x + 0.5 * c * sx)
            v[:, 2] += self.f * w * (sx * y - sy * x)
        return v


def rk2_advance(q: np.ndarray, guidance, dt: float, h_min: float, cfl: float = DEFAULT_CFL) -> np.ndarray:
    """Capped explicit midpoint step; returns the new positions.

    Each stage velocity is capped so that it moves a particle at most
    ``cfl * h_min`` over its own stage length.
    """
    if not 0.0 < cfl < 1.0:
        raise ValueError("cfl must lie in (0, 1)")
    k1 = cap_velocity(guidance.velocity(q), cfl * h_min / (0.5 * dt))
    mid = guidance.clamp(q + 0.5 * dt * k1)
    k2 = cap_velocity(guidance.velocity(mid), cfl * h_min / dt)
    return q + dt * k2


def detect_first_hit(ens: TrajectoryEnsemble, idx: np.ndarray, q0: np.ndarray, q1: np.ndarray,
                     plane: float, t: float, dt: float) -> np.ndarray:
    """Mark particles ``idx`` whose segment q0 -> q1 crosses z = plane upward.

    Records tau and the interpolated hit place (z pinned to ``plane``).
    Returns the indices (into ``idx``) of new arrivals.
    """
    z0, z1 = q0[:, 2], q1[:, 2]
    crossed = np.flatnonzero((z0 < plane) & (z1 >= plane))
    if crossed.size:
        m = (plane - z0[crossed]) / (z1[crossed] - z0[crossed])
        who = idx[crossed]
        place = q0[crossed] + m[:, None] * (q1[crossed] - q0[crossed])
        place[:, 2] = plane
        ens.hit[who] = place
        ens.tau[who] = t + m * dt
        ens.status[who] = ARRIVED
    return crossed


def cap_terminate(ens: TrajectoryEnsemble, idx: np.ndarray, q0: np.ndarray, q1: np.ndarray,
                  W, t: float, dt: float, hbar: float = 1.0) -> np.ndarray:
    """Accumulate (2/hbar) W(z_mid) dt and absorb once exp(-integral) <= xi.

    ``W`` is a callable of z. The absorption time is interpolated linearly in
    the log-survival within the step. Returns the indices (into ``idx``) of
    newly absorbed particles.
    """
    zm = 0.5 * (q0[:, 2] + q1[:, 2])
    inc = 2.0 / hbar * np.asarray(W(zm), dtype=float) * dt
    before = ens.survival[idx]
    after = before + inc
    ens.survival[idx] = after
    threshold = -np.log(ens.xi[idx])
    hit = np.flatnonzero((after >= threshold) & (inc > 0))
    if hit.size:
        m = (threshold[hit] - before[hit]) / inc[hit]
        m = np.clip(m, 0.0, 1.0)
        who = idx[hit]
        ens.tau[who] = t + m * dt
        ens.hit[who] = q1[hit]
        ens.status[who] = ABSORBED
    return hit


def advance_ensemble(ens: TrajectoryEnsemble, guidance, t: float, dt: float, h_min: float, hz: float,
                     plane: float | None = None, W=None, cfl: float = DEFAULT_CFL, hbar: float = 1.0) -> None:
    """One field step for all alive particles, with first-hit and CAP checks.

    Particles within ``2 hz`` of the counting plane take two half steps so a
    capped step cannot skip the bracket test.
    """
    idx = ens.alive
    if idx.size == 0:
        return
    near = np.zeros(idx.size, dtype=bool)
    if plane is not None:
        near = ens.positions[idx, 2] >= plane - 2.0 * hz
    for group, nsub in ((idx[~near], 1), (idx[near], 2)):
        sub_dt = dt / nsub
        for s in range(nsub):
            if group.size == 0:
                break
            t_s = t + s * sub_dt
            q0 = ens.positions[group]
            q1 = rk2_advance(q0, guidance, sub_dt, h_min, cfl)
            keep = np.ones(group.size, dtype=bool)
            if plane is not None:
                keep[detect_first_hit(ens, group, q0, q1, plane, t_s, sub_dt)] = False
            if W is not None:
                live = np.flatnonzero(keep)
                gone = cap_terminate(ens, group[live], q0[live], q1[live], W, t_s, sub_dt, hbar)
                keep[live[gone]] = False
            ens.positions[group[keep]] = guidance.clamp(q1[keep])
            group = group[keep]


@dataclass
class TrajectoryObserver:
    """Propagation observer moving an ensemble along with the field.

    ``guidance_factory(psi)`` builds a guidance object from a field snapshot
    (a SpinorField for full runs, a 1D array for reduced runs). By default the
    post-step field guides the step; ``use_pre_step`` switches to the
    pre-step field. ``checkpoints`` lists times at which alive z-positions are
    stored in ``snapshots``.
    """

    ensemble: TrajectoryEnsemble
    guidance_factory: object
    dt: float
    h_min: float
    hz: float
    plane: float | None = None
    W: object = None
    cfl: float = DEFAULT_CFL
    use_pre_step: bool = False
    checkpoints: tuple = ()
    hbar: float = 1.0
    snapshots: dict = field(default_factory=dict)

    def __post_init__(self):
        self._check_steps = {int(round(c / self.dt)): c for c in self.checkpoints}
        if 0 in self._check_steps:
            self._snap(self._check_steps[0])

    def _snap(self, label):
        ens = self.ensemble
        idx = ens.alive
        self.snapshots[label] = ens.positions[idx].copy()

    def __call__(self, t, psi_old, psi_new):
        guide = self.guidance_factory(psi_old if self.use_pre_step else psi_new)
        advance_ensemble(self.ensemble, guide, t, self.dt, self.h_min, self.hz, self.plane, self.W, self.cfl, self.hbar)
        step = int(round(t / self.dt)) + 1
        if step in self._check_steps:
            self._snap(self._check_steps[step])

    def flush(self):
        pass
