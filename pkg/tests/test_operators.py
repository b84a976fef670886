import math

import numpy as np
import pytest
import scipy.sparse as sp

from detection_time.errors import ConfigError
from detection_time.grid import GridSpec, linear_index
from detection_time.model import BlochSpinor, DetectorModel, PhysicsConfig, cap_profile
from detection_time.operators import (
    DIRICHLET_BOTH,
    ROBIN_TOP,
    assemble_hamiltonian,
    assemble_laplacian_1d,
    central_difference_1d,
    roof_projector,
    spin_coupling,
)

KAPPA = math.pi


def test_laplacian_rows():
    h = 0.1
    T = assemble_laplacian_1d(6, h).toarray()
    assert np.allclose(T[2, 1:4], [-0.5 / h**2, 1.0 / h**2, -0.5 / h**2])
    assert np.all(T[0] == 0) and np.all(T[:, 0] == 0)
    assert np.all(T[-1] == 0) and np.all(T[:, -1] == 0)


def test_robin_roof_row():
    h = 0.1
    T = assemble_laplacian_1d(6, h, ROBIN_TOP, KAPPA).toarray()
    assert T[-1, -2] == pytest.approx(-0.5 / h**2)
    assert T[-1, -1] == pytest.approx(0.5 / h**2 - 0.5j * KAPPA / h)


def test_robin_row_is_ghost_elimination():
    # applying the stencil with ghost psi_n = (1 + i kappa h) psi_{n-1}
    h, n = 0.05, 8
    rng = np.random.default_rng(2)
    psi = rng.normal(size=n) + 1j * rng.normal(size=n)
    psi[0] = 0.0
    ghost = (1 + 1j * KAPPA * h) * psi[-1]
    expected = -0.5 * (psi[-2] - 2 * psi[-1] + ghost) / h**2
    T = assemble_laplacian_1d(n, h, ROBIN_TOP, KAPPA)
    assert (T @ psi)[-1] == pytest.approx(expected)


def test_laplacian_errors():
    with pytest.raises(ValueError):
        assemble_laplacian_1d(2, 0.1)
    with pytest.raises(ValueError):
        assemble_laplacian_1d(5, 0.1, "periodic")


def test_hermiticity_flags():
    assert assemble_laplacian_1d(6, 0.1, DIRICHLET_BOTH).hermitian
    T = assemble_laplacian_1d(6, 0.1, ROBIN_TOP, KAPPA)
    assert not T.hermitian
    gamma = T.anti_hermitian_part().toarray()
    expected = np.zeros((6, 6))
    expected[-1, -1] = KAPPA / (2 * 0.1)
    assert np.allclose(gamma, expected)


def test_central_difference_antisymmetric():
    D = central_difference_1d(7, 0.2).toarray()
    assert np.allclose(D, -D.T)
    assert D[3, 4] == pytest.approx(2.5) and D[3, 2] == pytest.approx(-2.5)
    assert np.all(D[0] == 0) and np.all(D[-1] == 0)


@pytest.fixture
def small():
    grid = GridSpec(3.0, 3.0, 2.0, 5, 5, 6)
    phys = PhysicsConfig(2.0, 1.5, BlochSpinor(math.pi / 3, 0.4))
    return grid, phys


def test_spin_coupling_blocks(small):
    grid, _ = small
    C = spin_coupling(grid)
    n = grid.size
    up_down = C[:n, n:].toarray()
    down_up = C[n:, :n].toarray()
    assert np.allclose(up_down, down_up.conj().T)
    roof_rows = np.unique(np.nonzero(down_up)[0])
    assert np.all(roof_rows % grid.Nz == grid.Nz - 1)


def test_spin_coupling_stencil(small):
    grid, _ = small
    C = spin_coupling(grid).toarray()
    n = grid.size
    row = linear_index(2, 2, grid.Nz - 1, grid)
    cx = 1.0 / (2 * grid.hx) / (2 * grid.hz)
    cy = 1.0 / (2 * grid.hy) / (2 * grid.hz)
    # C_down_up = -(Dx + i Dy)/(2 hz)
    assert C[n + row, linear_index(3, 2, grid.Nz - 1, grid)] == pytest.approx(-cx)
    assert C[n + row, linear_index(1, 2, grid.Nz - 1, grid)] == pytest.approx(cx)
    assert C[n + row, linear_index(2, 3, grid.Nz - 1, grid)] == pytest.approx(-1j * cy)


def test_spinor_abc_gamma_is_psd(small):
    grid, phys = small
    H = assemble_hamiltonian(grid, phys, DetectorModel("abc_spinor", kappa=KAPPA))
    gamma = H.anti_hermitian_part().toarray()
    assert np.allclose(gamma, gamma.conj().T)
    assert np.linalg.eigvalsh(gamma).min() >= -1e-12
    P = roof_projector(grid)
    expected = sp.block_diag([P, P]).toarray() * KAPPA / (2 * grid.hz)
    assert np.allclose(gamma, expected)


def test_spinless_abc_gamma(small):
    grid, _ = small
    H = assemble_hamiltonian(grid, PhysicsConfig(2.0, 1.5), DetectorModel("abc_spinless", kappa=KAPPA))
    assert np.allclose(H.anti_hermitian_part().toarray(), roof_projector(grid).toarray() * KAPPA / (2 * grid.hz))


def test_cap_gamma_is_w(small):
    grid, _ = small
    det = DetectorModel("cap", profile="tanh", z0=1.0, a=0.2, W_max=5.0)
    H = assemble_hamiltonian(grid, PhysicsConfig(2.0, 1.5), det)
    W = cap_profile(grid.z, det, grid.Lz)
    W[0] = W[-1] = 0.0
    expected = np.tile(W, grid.Nx * grid.Ny)
    gamma = H.anti_hermitian_part()
    assert np.allclose(gamma.diagonal(), expected)
    assert sp.linalg.norm(gamma - sp.diags(gamma.diagonal())) == 0.0


def test_detector_free_hamiltonian_hermitian(small):
    grid, phys = small
    H = assemble_hamiltonian(grid, phys, DetectorModel("none"))
    assert H.hermitian
    assert H.dimension == 2 * grid.size


def test_interior_row_is_kinetic_plus_potential(small):
    grid, _ = small
    omega = 2.0
    H = assemble_hamiltonian(grid, PhysicsConfig(omega, 1.5), DetectorModel("abc_spinless", kappa=KAPPA)).toarray()
    i, j, k = 2, 2, 3
    row = H[linear_index(i, j, k, grid)]
    V = 0.5 * omega**2 * ((grid.x[i] - grid.Lx / 2) ** 2 + (grid.y[j] - grid.Ly / 2) ** 2)
    diag = 1 / grid.hx**2 + 1 / grid.hy**2 + 1 / grid.hz**2 + V
    assert row[linear_index(i, j, k, grid)] == pytest.approx(diag)
    assert row[linear_index(i + 1, j, k, grid)] == pytest.approx(-0.5 / grid.hx**2)
    assert row[linear_index(i, j - 1, k, grid)] == pytest.approx(-0.5 / grid.hy**2)
    assert row[linear_index(i, j, k + 1, grid)] == pytest.approx(-0.5 / grid.hz**2)
    assert np.count_nonzero(row) == 7


def test_spinor_abc_requires_spinor(small):
    grid, _ = small
    with pytest.raises(ConfigError):
        assemble_hamiltonian(grid, PhysicsConfig(2.0, 1.5), DetectorModel("abc_spinor"))


def test_cap_onset_outside_grid(small):
    grid, _ = small
    with pytest.raises(ConfigError):
        assemble_hamiltonian(grid, PhysicsConfig(2.0, 1.5), DetectorModel("cap", z0=5.0))
