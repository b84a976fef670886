import math

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from detection_time.errors import SolverFailure
from detection_time.grid import SCALAR, GridSpec, SpinorField
from detection_time.model import BlochSpinor, DetectorModel, PhysicsConfig, initial_state
from detection_time.operators import SparseOperator, assemble_hamiltonian
from detection_time.propagator import (
    CrankNicolson,
    NormSeries,
    SnapshotWriter,
    SolverConfig,
    cn_step,
    n_steps,
    propagate,
)


@pytest.mark.parametrize("W,dt", [(40.0, 1e-3), (3.0, 0.1), (0.5, 2.0)])
def test_one_site_cayley_ratio(W, dt):
    H = SparseOperator(sp.csr_matrix([[-1j * W]]))
    out = cn_step(np.array([1.0 + 0.5j]), H, SolverConfig(dt))
    assert out[0] / (1.0 + 0.5j) == pytest.approx((1 - dt * W / 2) / (1 + dt * W / 2), abs=1e-12)


def _random_hermitian(n, seed):
    rng = np.random.default_rng(seed)
    A = sp.random(n, n, density=0.05, random_state=seed) + 1j * sp.random(n, n, density=0.05, random_state=seed + 1)
    H = A + A.conj().T + sp.diags(rng.uniform(0, 5, n))
    return SparseOperator(H)


def test_unitarity_for_hermitian_operator():
    H = _random_hermitian(200, 3)
    assert H.hermitian
    cfg = SolverConfig(0.05)
    rng = np.random.default_rng(4)
    psi = rng.normal(size=200) + 1j * rng.normal(size=200)
    stepper = CrankNicolson(H, cfg)
    for _ in range(5):
        new = stepper.step(psi)
        assert abs(np.linalg.norm(new) / np.linalg.norm(psi) - 1.0) <= 10 * cfg.rel_tol
        psi = new


def test_contractive_with_absorber():
    H0 = _random_hermitian(200, 5)
    W = np.zeros(200)
    W[150:] = 2.0
    H = SparseOperator(H0.matrix - 1j * sp.diags(W))
    cfg = SolverConfig(0.05)
    psi = np.random.default_rng(6).normal(size=200).astype(complex)
    stepper = CrankNicolson(H, cfg)
    for _ in range(5):
        new = stepper.step(psi)
        assert np.linalg.norm(new) <= np.linalg.norm(psi) + 10 * cfg.rel_tol
        psi = new


def test_residual_meets_target():
    H = _random_hermitian(150, 7)
    cfg = SolverConfig(0.1, rel_tol=1e-10)
    stepper = CrankNicolson(H, cfg)
    psi = np.ones(150, dtype=complex)
    new = stepper.step(psi)
    b = stepper.B @ psi
    assert np.linalg.norm(stepper.A @ new - b) / np.linalg.norm(b) <= 1e-10
    assert stepper.max_residual <= 1e-10


@pytest.fixture(scope="module")
def spinor_abc():
    omega = 9.0
    w = 16.0 / math.sqrt(omega)
    grid = GridSpec(w, w, 3.0, 10, 10, 30)
    phys = PhysicsConfig(omega, 2.5, BlochSpinor(math.pi / 2, 0.3))
    H = assemble_hamiltonian(grid, phys, DetectorModel("abc_spinor"))
    return grid, phys, H


@pytest.mark.parametrize("pc", ["none", "jacobi", "separable"])
def test_preconditioners_agree_with_direct_solve(spinor_abc, pc):
    grid, phys, H = spinor_abc
    cfg = SolverConfig(0.02, rel_tol=1e-11, preconditioner=pc)
    psi = initial_state(grid, phys).as_vector()
    stepper = CrankNicolson(H, cfg)
    direct = spla.spsolve(sp.csc_matrix(stepper.A), stepper.B @ psi)
    assert np.linalg.norm(stepper.step(psi) - direct) <= 1e-9 * np.linalg.norm(direct)


def test_separable_inverse_is_exact_for_cap():
    omega = 4.0
    w = 16.0 / math.sqrt(omega)
    grid = GridSpec(w, w, 3.0, 10, 10, 30)
    phys = PhysicsConfig(omega, 3.0)
    H = assemble_hamiltonian(grid, phys, DetectorModel("cap", z0=2.0, a=0.1, W_max=10.0))
    stepper = CrankNicolson(H, SolverConfig(0.05, preconditioner="separable"))
    b = np.random.default_rng(8).normal(size=grid.size).astype(complex)
    x = stepper.exact(b)
    assert np.linalg.norm(stepper.A @ x - b) <= 1e-12 * np.linalg.norm(b)


def test_zero_steps_returns_input(spinor_abc):
    grid, phys, H = spinor_abc
    psi = initial_state(grid, phys)
    norms, out = propagate(psi, H, SolverConfig(0.1), 0.05)
    assert len(norms.norm_sq) == 1
    assert out is psi


def test_step_count():
    assert n_steps(1.0, 0.1) == 10
    assert n_steps(0.05, 0.1) == 0
    assert n_steps(0.30000000000000004, 0.1) == 3


def test_detector_free_norm_drift():
    omega = 4.0
    w = 16.0 / math.sqrt(omega)
    grid = GridSpec(w, w, 3.0, 10, 10, 24)
    phys = PhysicsConfig(omega, 2.5)
    H = assemble_hamiltonian(grid, phys, DetectorModel("none"))
    cfg = SolverConfig(0.01, preconditioner="separable")
    norms, _ = propagate(initial_state(grid, phys), H, cfg, 10.0)
    assert len(norms.norm_sq) == 1001
    assert abs(norms.norm_sq[-1] - norms.norm_sq[0]) <= 1000 * 10 * cfg.rel_tol
    assert norms.monotone


def test_absorbing_run_is_monotone(spinor_abc):
    grid, phys, H = spinor_abc
    norms, _ = propagate(initial_state(grid, phys), H, SolverConfig(0.02, preconditioner="separable"), 2.0)
    assert norms.monotone
    assert norms.norm_sq[-1] < 0.9


def test_second_order_in_time():
    omega = 4.0
    w = 16.0 / math.sqrt(omega)
    grid = GridSpec(w, w, 4.0, 10, 10, 40)
    phys = PhysicsConfig(omega, 3.0)
    H = assemble_hamiltonian(grid, phys, DetectorModel("none"))
    # smooth packet: transverse ground state times a Gaussian in z
    base = initial_state(grid, phys).up.reshape(grid.shape)
    gz = np.exp(-((grid.z - 2.0) ** 2) / 0.5 + 1j * grid.z)
    gz[0] = 0.0
    psi0 = SpinorField(grid, (base[:, :, 5:6] * gz).ravel(), None, SCALAR)
    T = 0.2

    def final(dt):
        return propagate(psi0, H, SolverConfig(dt, rel_tol=1e-12, preconditioner="separable"), T)[1].as_vector()

    ref = final(0.0025)
    e1 = np.linalg.norm(final(0.04) - ref)
    e2 = np.linalg.norm(final(0.02) - ref)
    assert math.log2(e1 / e2) >= 1.8


def test_solver_failure_carries_residual():
    H = _random_hermitian(300, 9)
    cfg = SolverConfig(5.0, rel_tol=1e-14, restart=2, max_iter=1)
    psi0 = SpinorField(GridSpec(1, 1, 1, 4, 5, 15), np.ones(300), None, SCALAR)
    with pytest.raises(SolverFailure) as info:
        propagate(psi0, H, cfg, 20.0)
    assert info.value.residual > 1e-14
    assert info.value.step == 0
    assert len(info.value.partial.norm_sq) == 1


@pytest.mark.parametrize(
    "kwargs", [dict(dt=0.0), dict(dt=0.1, rel_tol=1.0), dict(dt=0.1, restart=1), dict(dt=0.1, preconditioner="ilu")]
)
def test_solver_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_norm_series_monotone_flag():
    assert NormSeries(np.arange(3.0), np.array([1.0, 0.9, 0.8])).monotone
    assert not NormSeries(np.arange(3.0), np.array([1.0, 0.9, 0.95])).monotone


def test_snapshot_writer(tmp_path, spinor_abc):
    grid, phys, H = spinor_abc
    cfg = SolverConfig(0.05, preconditioner="separable")
    writer = SnapshotWriter(tmp_path, [0.0, 0.1], cfg.dt)
    propagate(initial_state(grid, phys), H, cfg, 0.2, [writer])
    writer.flush()
    lines = (tmp_path / "snapshots.csv").read_text().splitlines()
    assert lines[0] == "step,t,file,Nx,Ny,Nz" and len(lines) == 3
    first = np.fromfile(tmp_path / "density_000000.bin").reshape(grid.shape)
    assert first.sum() * grid.cell_volume == pytest.approx(1.0)
