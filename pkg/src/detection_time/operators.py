"""Sparse discrete Hamiltonians.

The spin-diagonal block is the Kronecker sum ``Hx (+) Hy (+) Hz`` of 1D
operators (kinetic stencil plus the part of the potential depending on that
axis). Dirichlet boundary nodes have empty rows and columns, so they stay at
zero once initialised to zero. The spinor ABC adds off-diagonal spin blocks
living on the roof layer ``k = Nz - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .grid import SPINOR, GridSpec
from .model import ABC_SPINLESS, ABC_SPINOR, CAP, DetectorModel, PhysicsConfig, cap_profile

DIRICHLET_BOTH = "dirichlet_both"
ROBIN_TOP = "dirichlet_bottom_robin_top"

HERMITIAN_TOL = 1e-14


def _is_hermitian(m: sp.spmatrix, tol: float = HERMITIAN_TOL) -> bool:
    diff = (m - m.conj().T).tocoo()
    if diff.nnz == 0:
        return True
    return float(np.max(np.abs(diff.data))) <= tol


@dataclass
class SparseOperator:
    """Immutable complex sparse operator in CSR layout."""

    matrix: sp.csr_matrix
    hermitian: bool = field(init=False)

    def __post_init__(self):
        self.matrix = sp.csr_matrix(self.matrix, dtype=complex)
        self.matrix.sum_duplicates()
        self.matrix.eliminate_zeros()
        self.hermitian = _is_hermitian(self.matrix)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def __matmul__(self, vec):
        return self.matrix @ vec

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def anti_hermitian_part(self) -> sp.csr_matrix:
        """Gamma = i (H - H^dagger) / 2, Hermitian and >= 0 for absorbing models."""
        m = self.matrix
        return sp.csr_matrix(0.5j * (m - m.conj().T))


@dataclass
class Hamiltonian(SparseOperator):
    """Full-grid Hamiltonian plus the pieces a separable solver needs."""

    grid: GridSpec | None = None
    n_components: int = 1
    factors: tuple | None = None
    coupling: sp.csr_matrix | None = None
    detector: DetectorModel | None = None


def assemble_laplacian_1d(n: int, h: float, face: str = DIRICHLET_BOTH, kappa: float = 0.0) -> SparseOperator:
    """Kinetic operator -1/2 d^2/dz^2 on ``n`` nodes spaced ``h``.

    Node 0 (and node ``n-1`` for ``dirichlet_both``) is a Dirichlet boundary
    node with an empty row and column. For ``dirichlet_bottom_robin_top`` the
    ghost beyond node ``n-1`` is eliminated with psi_n = (1 + i kappa h) psi_{n-1},
    which changes only the last row.
    """
    if n < 3:
        raise ValueError(f"need at least 3 nodes, got {n}")
    if face not in (DIRICHLET_BOTH, ROBIN_TOP):
        raise ValueError(f"unknown face specification {face!r}")
    main = np.full(n, 1.0 / h**2, dtype=complex)
    off = np.full(n - 1, -0.5 / h**2, dtype=complex)
    main[0] = 0.0
    off[0] = 0.0
    if face == DIRICHLET_BOTH:
        main[-1] = 0.0
        off[-1] = 0.0
    else:
        main[-1] = 0.5 / h**2 - 0.5j * kappa / h
    return SparseOperator(sp.diags([off, main, off], [-1, 0, 1], format="csr"))


def central_difference_1d(n: int, h: float) -> sp.csr_matrix:
    """Central first difference with Dirichlet edges (antisymmetric)."""
    upper = np.full(n - 1, 0.5 / h)
    lower = np.full(n - 1, -0.5 / h)
    # rows and columns 0 and n-1 are boundary nodes held at zero
    upper[0] = upper[-1] = 0.0
    lower[0] = lower[-1] = 0.0
    return sp.diags([lower, upper], [-1, 1], format="csr")


def _kron3(a, b, c):
    return sp.kron(sp.kron(a, b, format="csr"), c, format="csr")


def roof_projector(grid: GridSpec) -> sp.csr_matrix:
    e = sp.csr_matrix(([1.0], ([grid.Nz - 1], [grid.Nz - 1])), shape=(grid.Nz, grid.Nz))
    return _kron3(sp.identity(grid.Nx), sp.identity(grid.Ny), e)


def axis_factors(grid: GridSpec, physics: PhysicsConfig, detector: DetectorModel):
    """1D operators whose Kronecker sum is the spin-diagonal Hamiltonian block."""
    w2 = 0.5 * physics.mass * physics.omega**2
    vx = w2 * (grid.x - grid.Lx / 2.0) ** 2
    vy = w2 * (grid.y - grid.Ly / 2.0) ** 2
    hx = assemble_laplacian_1d(grid.Nx, grid.hx).matrix + sp.diags(vx)
    hy = assemble_laplacian_1d(grid.Ny, grid.hy).matrix + sp.diags(vy)
    if detector.is_abc:
        hz = assemble_laplacian_1d(grid.Nz, grid.hz, ROBIN_TOP, detector.kappa).matrix
    else:
        hz = assemble_laplacian_1d(grid.Nz, grid.hz).matrix
    if detector.kind == CAP:
        W = cap_profile(grid.z, detector, grid.Lz)
        W[0] = W[-1] = 0.0
        hz = hz - 1j * sp.diags(W)
    return sp.csr_matrix(hx), sp.csr_matrix(hy), sp.csr_matrix(hz)


def spin_coupling(grid: GridSpec) -> sp.csr_matrix:
    """Off-diagonal spin blocks of the spinor ABC, supported on the roof layer."""
    e = sp.csr_matrix(([1.0], ([grid.Nz - 1], [grid.Nz - 1])), shape=(grid.Nz, grid.Nz))
    Dx = _kron3(central_difference_1d(grid.Nx, grid.hx), sp.identity(grid.Ny), e)
    Dy = _kron3(sp.identity(grid.Nx), central_difference_1d(grid.Ny, grid.hy), e)
    c_down_up = -(Dx + 1j * Dy) / (2.0 * grid.hz)
    c_up_down = (Dx - 1j * Dy) / (2.0 * grid.hz)
    return sp.bmat([[None, c_up_down], [c_down_up, None]], format="csr")


def assemble_hamiltonian(grid: GridSpec, physics: PhysicsConfig, detector: DetectorModel) -> Hamiltonian:
    """Discrete Hamiltonian on the full grid (N x N scalar, 2N x 2N spinor)."""
    detector.validate_for(grid.Lz)
    spinor = physics.spin_mode == SPINOR
    if detector.kind == ABC_SPINOR and not spinor:
        raise ConfigError("the spinor ABC needs a spinor (spin-1/2) configuration")

    hx, hy, hz = axis_factors(grid, physics, detector)
    ix, iy, iz = (sp.identity(n, format="csr") for n in grid.shape)
    block = _kron3(hx, iy, iz) + _kron3(ix, hy, iz) + _kron3(ix, iy, hz)

    coupling = None
    if spinor:
        H = sp.block_diag([block, block], format="csr")
        if detector.kind == ABC_SPINOR:
            coupling = spin_coupling(grid)
            H = H + coupling
    else:
        H = block

    return Hamiltonian(
        H,
        grid=grid,
        n_components=2 if spinor else 1,
        factors=(hx, hy, hz),
        coupling=coupling,
        detector=detector,
    )


__all__ = [
    "ABC_SPINLESS",
    "DIRICHLET_BOTH",
    "ROBIN_TOP",
    "Hamiltonian",
    "SparseOperator",
    "assemble_hamiltonian",
    "assemble_laplacian_1d",
    "axis_factors",
    "central_difference_1d",
    "roof_projector",
    "spin_coupling",
]
