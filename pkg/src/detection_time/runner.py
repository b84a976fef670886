"""Execution of single runs, sweeps and convergence checks from a RunConfig."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .bohmian import (
    FactorizedGuidance,
    GridGuidance,
    TrajectoryEnsemble,
    TrajectoryObserver,
    sample_initial,
    sample_positions,
)
from .config import FULL, RunConfig
from .errors import ConfigError, SolverFailure
from .model import ABC_SPINOR, NO_DETECTOR, check_transverse_containment, initial_state, time_unit, to_si
from .observables import DetectionRecorder, DetectionSeries, cap_on_grid, histogram
from .operators import assemble_hamiltonian
from .propagator import CrankNicolson, SnapshotWriter, propagate
from .reference import Line1DProblem, evolve_1d, free_bohmian_arrivals, rho_free

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    summary: dict
    series: DetectionSeries | None
    ensemble: TrajectoryEnsemble | None


class WallMonitor:
    """Tracks max |Psi| on the first interior lateral layers relative to max |Psi|."""

    def __init__(self, every: int = 10):
        self.every = every
        self.count = 0
        self.value = 0.0

    def __call__(self, t, psi_old, psi_new):
        self.count += 1
        if self.count % self.every:
            return
        amp = np.sqrt(psi_new.density().reshape(psi_new.grid.shape))
        edge = max(amp[1].max(), amp[-2].max(), amp[:, 1].max(), amp[:, -2].max())
        self.value = max(self.value, float(edge / amp.max()))


def _si_block(cfg: RunConfig, summary: dict) -> dict:
    si = cfg.si
    d, m = si.d_phys, si.mass_kg
    out = {
        "d_phys_m": d,
        "mass_kg": m,
        "T_star_s": time_unit(d, m),
        "t_cutoff_s": to_si(cfg.numerics.t_cutoff, "time", d, m),
        "L_m": to_si(cfg.physics.L, "length", d, m),
        "omega_rad_per_s": to_si(cfg.physics.omega, "frequency", d, m),
    }
    if summary.get("mu_star") is not None:
        out["mu_star_s"] = to_si(summary["mu_star"], "time", d, m)
    if cfg.detector.kind in ("abc_spinless", "abc_spinor"):
        out["kappa_per_m"] = to_si(cfg.detector.kappa, "kappa", d, m)
    return out


def _trajectory_summary(ens: TrajectoryEnsemble) -> dict:
    tau = ens.arrival_times()
    return {
        "n": ens.size,
        "fraction_detected": ens.fraction_detected(),
        "mean_tau": float(tau.mean()) if tau.size else None,
        "max_tau": float(tau.max()) if tau.size else None,
    }


def _reduced(cfg: RunConfig, observers: list):
    n = cfg.numerics
    det = cfg.detector_model()
    prob = Line1DProblem.for_detector(det, cfg.physics.L, cfg.geometry.Nz, n.dt, cfg.physics.d)
    ens = None
    if n.n_trajectories:
        pos, xi = sample_positions(n.n_trajectories, cfg.physics.omega, prob.d, n.seed, offset=0.5 * prob.hz)
        ens = TrajectoryEnsemble(pos, xi, n.guidance, n.seed)
        s = cfg.bloch().bloch_vector
        z = prob.z

        def factory(psi_z):
            return FactorizedGuidance(z, psi_z, cfg.physics.omega, n.guidance, s)

        plane = prob.roof if det.is_abc else None
        observers = observers + [
            TrajectoryObserver(ens, factory, n.dt, prob.hz, prob.hz, plane, prob.cap_function(), n.cfl,
                               n.guidance_field == "pre", tuple(n.checkpoints))
        ]
    res = evolve_1d(prob, n.t_cutoff, observers)
    return res.series, ens, {"max_residual": 0.0, "solver": "direct_lu_1d", "max_wall_amplitude": None,
                             "hz": prob.hz, "counting_plane": prob.roof if det.is_abc else None}


def _full(cfg: RunConfig, observers: list, outdir: Path | None):
    n = cfg.numerics
    det = cfg.detector_model()
    phys = cfg.physics_config()
    grid = cfg.grid()
    ratio = check_transverse_containment(grid, phys)
    H = assemble_hamiltonian(grid, phys, det)
    psi0 = initial_state(grid, phys)
    solver = cfg.solver_config()
    stepper = CrankNicolson(H, solver)
    rec = DetectionRecorder(det)
    wall = WallMonitor()
    obs = [rec, wall] + observers
    if cfg.outputs.snapshot_times and outdir is not None:
        obs.append(SnapshotWriter(outdir / "snapshots", cfg.outputs.snapshot_times, n.dt))
    ens = None
    if n.n_trajectories:
        ens = sample_initial(n.n_trajectories, grid, phys, n.seed, n.guidance)
        plane = grid.z_roof if det.is_abc else None
        W = None
        if det.is_cap:
            Wz = cap_on_grid(grid, det)
            W = lambda z: np.interp(z, grid.z, Wz)  # noqa: E731
        obs.append(TrajectoryObserver(ens, lambda psi: GridGuidance(psi, n.guidance), n.dt, grid.h_min, grid.hz,
                                      plane, W, n.cfl, n.guidance_field == "pre", tuple(n.checkpoints)))
    info = {"solver": f"gmres+{solver.preconditioner}", "grid": list(grid.shape),
            "box": [grid.Lx, grid.Ly, grid.Lz], "initial_wall_ratio": ratio}
    try:
        norms, _ = propagate(psi0, H, solver, n.t_cutoff, obs, stepper=stepper)
    except SolverFailure as exc:
        partial = exc.partial
        series = rec.series(partial, float(partial.times[-1])) if len(partial.times) > 1 else None
        info.update(max_residual=exc.residual, max_wall_amplitude=wall.value, failed_step=exc.step)
        exc.result = (series, ens, info)
        raise
    for o in obs:
        if hasattr(o, "flush"):
            o.flush()
    info.update(max_residual=stepper.max_residual, max_wall_amplitude=wall.value,
                gmres_iterations=stepper.iterations)
    return rec.series(norms, n.t_cutoff), ens, info


def _free(cfg: RunConfig):
    """Detector-free validation scenario: rho_free plus Pauli-guided arrivals."""
    n, p = cfg.numerics, cfg.physics
    hz = p.L / cfg.geometry.Nz
    curve = rho_free(p.L, n.t_cutoff, hz=hz, dt=n.dt)
    series = DetectionSeries(curve.times, 1.0 - np.concatenate([[0.0], np.cumsum(
        0.5 * (curve.flux[1:] + curve.flux[:-1]) * np.diff(curve.times))]), curve.normloss, curve.flux, "free")
    ens = None
    if n.n_trajectories:
        arr = free_bohmian_arrivals(p.L, p.theta, p.omega, n.n_trajectories, n.t_cutoff, n.seed, hz, n.dt,
                                    cfl=n.cfl, phi=p.phi)
        ens = arr.ensemble
    info = {"solver": "direct_lu_1d", "max_residual": 0.0, "max_wall_amplitude": None,
            "validation_scenario": "detector-free arrivals; not a detector model",
            "far_wall_probability": curve.far_wall_max, "box_length": curve.box_length,
            "route_error": curve.route_error}
    return series, ens, info


def _write(outdir: Path, summary: dict, series, ens, bins: int, tag=None):
    outdir.mkdir(parents=True, exist_ok=True)
    if series is not None:
        series.write_csv(outdir / "series.csv", tag=tag)
    if ens is not None:
        ens.write_csv(outdir / "arrivals.csv")
        tau = ens.arrival_times()
        edges, heights = histogram(tau, ens.size, bins, (0.0, float(series.t_cutoff)))
        with open(outdir / "histogram.csv", "w") as fh:
            fh.write("t_left,t_right,density\n")
            for a, b, h in zip(edges[:-1], edges[1:], heights):
                fh.write(f"{float(a)!r},{float(b)!r},{float(h)!r}\n")
    with open(outdir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=float)


def run(cfg: RunConfig, outdir: Path | None = None, write: bool = True) -> RunResult:
    """Execute one configuration and (optionally) write its artifacts."""
    outdir = Path(outdir) if outdir is not None else cfg.output_dir
    start = time.time()
    observers: list = []
    status = "complete"
    error = None
    try:
        if cfg.detector.kind == NO_DETECTOR:
            series, ens, info = _free(cfg)
        elif cfg.numerics.mode == FULL:
            series, ens, info = _full(cfg, observers, outdir if write else None)
        else:
            series, ens, info = _reduced(cfg, observers)
    except SolverFailure as exc:
        series, ens, info = getattr(exc, "result", (None, None, {}))
        status, error = "incomplete", str(exc)
        if write:
            summary = _summary(cfg, series, ens, info, status, error, time.time() - start)
            _write(outdir, summary, series, None, cfg.outputs.bins)
        raise
    if ens is not None:
        ens.time_out()
    summary = _summary(cfg, series, ens, info, status, error, time.time() - start)
    if write:
        _write(outdir, summary, series, ens, cfg.outputs.bins, "free" if cfg.detector.kind == NO_DETECTOR else None)
    return RunResult(summary, series, ens)


def _summary(cfg, series, ens, info, status, error, elapsed):
    summary = {"status": status, "config": cfg.to_dict(), "elapsed_s": elapsed}
    summary.update(info)
    if error:
        summary["error"] = error
    if series is not None:
        summary["detection_fraction"] = series.detection_fraction
        summary["mu_star"] = series.mu_star
        summary["t_cutoff"] = series.t_cutoff
        summary["min_density"] = series.min_density()
        if series.rho_T_model is not None:
            summary["dual_route_error"] = series.dual_route_error()
    if ens is not None:
        summary["trajectories"] = _trajectory_summary(ens)
    if cfg.si.enabled:
        summary["si"] = _si_block(cfg, summary)
    return summary


def _sweep_member(args):
    cfg, axis, value, outdir = args
    member = cfg.with_value(axis, value)
    res = run(member, outdir)
    return res.summary


def fit_sqrt_omega(omegas, mu):
    """Least-squares fit mu = A + B sqrt(omega); returns (A, B, max |residual|)."""
    omegas = np.asarray(omegas, dtype=float)
    mu = np.asarray(mu, dtype=float)
    X = np.column_stack([np.ones_like(omegas), np.sqrt(omegas)])
    coef, *_ = np.linalg.lstsq(X, mu, rcond=None)
    resid = mu - X @ coef
    return float(coef[0]), float(coef[1]), float(np.max(np.abs(resid)))


def sweep(cfg: RunConfig, axis: str, values, outdir: Path | None = None, jobs: int = 1) -> dict:
    """Run one member per value and collate fraction, mu* and mean tau."""
    outdir = Path(outdir) if outdir is not None else cfg.output_dir
    for v in values:
        cfg.with_value(axis, v)  # validate every member before running any
    tasks = [(cfg, axis, v, outdir / f"{axis}_{i:02d}") for i, v in enumerate(values)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(_sweep_member, tasks))
    else:
        summaries = [_sweep_member(t) for t in tasks]
    rows = []
    for v, s in zip(values, summaries):
        traj = s.get("trajectories") or {}
        rows.append({axis: float(v), "detection_fraction": s["detection_fraction"], "mu_star": s["mu_star"],
                     "mean_tau": traj.get("mean_tau")})
    collated = {"axis": axis, "rows": rows}
    if axis == "omega" and cfg.detector.kind == ABC_SPINOR and len(values) >= 2:
        A, B, r = fit_sqrt_omega([r["omega"] for r in rows], [r["mu_star"] for r in rows])
        collated["fit"] = {"A": A, "B": B, "max_residual": r}
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "sweep.csv", "w") as fh:
        fh.write(f"{axis},detection_fraction,mu_star,mean_tau\n")
        for r in rows:
            mean_tau = "" if r["mean_tau"] is None else repr(float(r["mean_tau"]))
            fh.write(f"{r[axis]!r},{float(r['detection_fraction'])!r},{float(r['mu_star'])!r},{mean_tau}\n")
    with open(outdir / "sweep.json", "w") as fh:
        json.dump(collated, fh, indent=2)
    return collated


REFINABLE = ("dt", "Nz", "Nx")


def converge(cfg: RunConfig, refine=("dt",), outdir: Path | None = None) -> dict:
    """Rerun with each listed quantity refined by two and report eps_rel of mu*.

    ``dt`` halves the step, ``Nz`` doubles the z nodes, ``Nx`` doubles both
    lateral node counts.
    """
    outdir = Path(outdir) if outdir is not None else cfg.output_dir
    bad = set(refine) - set(REFINABLE)
    if bad:
        raise ConfigError(f"cannot refine {sorted(bad)}; choose from {REFINABLE}")
    base = run(cfg, outdir / "base").summary["mu_star"]
    report = {"base_mu_star": base, "refinements": {}}
    for what in refine:
        if what == "dt":
            new = replace(cfg, numerics=replace(cfg.numerics, dt=cfg.numerics.dt / 2))
        elif what == "Nz":
            new = replace(cfg, geometry=replace(cfg.geometry, Nz=2 * cfg.geometry.Nz))
        else:
            new = replace(cfg, geometry=replace(cfg.geometry, Nx=2 * cfg.geometry.Nx, Ny=2 * cfg.geometry.Ny))
        new.validate()
        mu = run(new, outdir / f"refined_{what}").summary["mu_star"]
        report["refinements"][what] = {"mu_star": mu, "eps_rel": abs(mu - base) / abs(mu)}
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "converge.json", "w") as fh:
        json.dump(report, fh, indent=2)
    return report


def units_report(d_phys: float, mass: float, times=(), lengths=()) -> dict:
    T = time_unit(d_phys, mass)
    return {
        "d_phys_m": d_phys,
        "mass_kg": mass,
        "T_star_s": T,
        "times_s": {repr(float(t)): to_si(float(t), "time", d_phys, mass) for t in times},
        "lengths_m": {repr(float(x)): to_si(float(x), "length", d_phys, mass) for x in lengths},
    }
