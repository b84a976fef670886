"""Cartesian lattice geometry, flattened indexing and grid derivatives.

Nodes sit at ``x_i = i*hx`` for ``i = 0..Nx-1`` with ``hx = Lx/Nx`` (and likewise
for y and z), so the last node of every axis lies one spacing inside the box.
Flattened arrays use ``l = i*Ny*Nz + j*Nz + k`` (z fastest).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, StencilError

SCALAR = "scalar"
SPINOR = "spinor"

_AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class GridSpec:
    Lx: float
    Ly: float
    Lz: float
    Nx: int
    Ny: int
    Nz: int

    def __post_init__(self):
        for name in ("Nx", "Ny", "Nz"):
            n = getattr(self, name)
            if int(n) != n or n < 4:
                raise ValueError(f"{name} must be an integer >= 4, got {n}")
        for name in ("Lx", "Ly", "Lz"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def hx(self) -> float:
        return self.Lx / self.Nx

    @property
    def hy(self) -> float:
        return self.Ly / self.Ny

    @property
    def hz(self) -> float:
        return self.Lz / self.Nz

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.Nx, self.Ny, self.Nz)

    @property
    def size(self) -> int:
        return self.Nx * self.Ny * self.Nz

    @property
    def spacings(self) -> tuple[float, float, float]:
        return (self.hx, self.hy, self.hz)

    @property
    def h_min(self) -> float:
        return min(self.spacings)

    @property
    def cell_volume(self) -> float:
        return self.hx * self.hy * self.hz

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.Nx) * self.hx

    @property
    def y(self) -> np.ndarray:
        return np.arange(self.Ny) * self.hy

    @property
    def z(self) -> np.ndarray:
        return np.arange(self.Nz) * self.hz

    @property
    def z_roof(self) -> float:
        """Height of the on-grid counting plane (last z node)."""
        return (self.Nz - 1) * self.hz

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, self.z, indexing="ij")


def linear_index(i, j, k, grid: GridSpec):
    """Flat index of lattice node ``(i, j, k)``; accepts scalars or arrays."""
    i, j, k = np.asarray(i), np.asarray(j), np.asarray(k)
    for val, n, name in ((i, grid.Nx, "i"), (j, grid.Ny, "j"), (k, grid.Nz, "k")):
        if np.any(val < 0) or np.any(val >= n):
            raise IndexError(f"{name} out of range [0, {n})")
    ell = i * grid.Ny * grid.Nz + j * grid.Nz + k
    return int(ell) if ell.ndim == 0 else ell


def inverse_index(ell, grid: GridSpec):
    ell = np.asarray(ell)
    if np.any(ell < 0) or np.any(ell >= grid.size):
        raise IndexError(f"flat index out of range [0, {grid.size})")
    i, rem = np.divmod(ell, grid.Ny * grid.Nz)
    j, k = np.divmod(rem, grid.Nz)
    if ell.ndim == 0:
        return int(i), int(j), int(k)
    return i, j, k


@dataclass
class SpinorField:
    """Grid amplitudes of a scalar or two-component wave function at one time.

    ``up`` and ``down`` are flat complex arrays of length ``grid.size``; in
    scalar mode ``down`` is ``None``.
    """

    grid: GridSpec
    up: np.ndarray
    down: np.ndarray | None = None
    spin_mode: str = field(default=SCALAR)

    def __post_init__(self):
        self.up = np.ascontiguousarray(self.up, dtype=complex).reshape(-1)
        if self.up.size != self.grid.size:
            raise ValueError("component length does not match grid")
        if self.spin_mode == SPINOR:
            if self.down is None:
                self.down = np.zeros_like(self.up)
            self.down = np.ascontiguousarray(self.down, dtype=complex).reshape(-1)
            if self.down.size != self.grid.size:
                raise ValueError("component length does not match grid")
        elif self.spin_mode == SCALAR:
            if self.down is not None:
                raise ValueError("scalar fields carry no down component")
        else:
            raise ValueError(f"unknown spin_mode {self.spin_mode!r}")

    @property
    def is_spinor(self) -> bool:
        return self.spin_mode == SPINOR

    @property
    def n_components(self) -> int:
        return 2 if self.is_spinor else 1

    def components(self) -> list[np.ndarray]:
        return [self.up, self.down] if self.is_spinor else [self.up]

    def as_vector(self) -> np.ndarray:
        if self.is_spinor:
            return np.concatenate([self.up, self.down])
        return self.up.copy()

    @classmethod
    def from_vector(cls, grid: GridSpec, vec: np.ndarray, spin_mode: str) -> "SpinorField":
        n = grid.size
        if spin_mode == SPINOR:
            return cls(grid, vec[:n], vec[n:], SPINOR)
        return cls(grid, vec, None, SCALAR)

    def density(self) -> np.ndarray:
        """|Psi|^2 on the flat grid."""
        rho = np.abs(self.up) ** 2
        if self.is_spinor:
            rho = rho + np.abs(self.down) ** 2
        return rho

    def norm_sq(self) -> float:
        return float(np.sum(self.density()) * self.grid.cell_volume)

    def copy(self) -> "SpinorField":
        return SpinorField(
            self.grid,
            self.up.copy(),
            None if self.down is None else self.down.copy(),
            self.spin_mode,
        )

    def midpoint(self, other: "SpinorField") -> "SpinorField":
        """Arithmetic mean of two fields (time-centred Crank-Nicolson state)."""
        down = None
        if self.is_spinor:
            down = 0.5 * (self.down + other.down)
        return SpinorField(self.grid, 0.5 * (self.up + other.up), down, self.spin_mode)


def trilinear(field: np.ndarray, q, grid: GridSpec) -> np.ndarray:
    """Trilinear interpolation of a nodal field at one or many positions.

    ``field`` may be flat or shaped ``grid.shape``; ``q`` is ``(3,)`` or
    ``(n, 3)``. Positions up to one spacing outside the node range are clamped
    onto the outermost cell; anything further out raises :class:`DomainError`.
    """
    f = np.asarray(field).reshape(grid.shape)
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    q = np.atleast_2d(q)

    idx = []
    frac = []
    for ax, (h, n) in enumerate(zip(grid.spacings, grid.shape)):
        s = q[:, ax] / h
        if np.any(s < -1.0) or np.any(s > n):
            raise DomainError(f"position outside the box along axis {'xyz'[ax]}")
        s = np.clip(s, 0.0, n - 1.0)
        i0 = np.minimum(np.floor(s).astype(np.intp), n - 2)
        idx.append(i0)
        frac.append(s - i0)

    (i, j, k), (tx, ty, tz) = idx, frac
    out = 0.0
    for di, wx in ((0, 1.0 - tx), (1, tx)):
        for dj, wy in ((0, 1.0 - ty), (1, ty)):
            for dk, wz in ((0, 1.0 - tz), (1, tz)):
                out = out + wx * wy * wz * f[i + di, j + dj, k + dk]
    return out[0] if single else out


def grad_component(field: np.ndarray, axis: str, grid: GridSpec) -> np.ndarray:
    """Derivative of a nodal field along ``axis``.

    x and y use the fourth-order central stencil inside, second-order one-sided
    stencils on the first interior layers and first-order differences on the
    faces. z stays second order (central inside, one-sided on both faces).
    Returns an array of the same shape as ``field``.
    """
    if axis not in _AXES:
        raise ValueError(f"axis must be one of x, y, z; got {axis!r}")
    ax = _AXES[axis]
    f = np.asarray(field)
    flat = f.ndim == 1
    u = f.reshape(grid.shape)
    u = np.moveaxis(u, ax, 0)
    n = u.shape[0]
    h = grid.spacings[ax]
    d = np.empty_like(u)

    if axis in ("x", "y"):
        if n < 5:
            raise StencilError(f"{axis} extent {n} too small for the 4th-order stencil")
        d[2:-2] = (-u[4:] + 8.0 * u[3:-1] - 8.0 * u[1:-3] + u[:-4]) / (12.0 * h)
        d[1] = (-3.0 * u[1] + 4.0 * u[2] - u[3]) / (2.0 * h)
        d[-2] = (u[-4] - 4.0 * u[-3] + 3.0 * u[-2]) / (2.0 * h)
        d[0] = (u[1] - u[0]) / h
        d[-1] = (u[-1] - u[-2]) / h
    else:
        if n < 3:
            raise StencilError(f"z extent {n} too small")
        d[1:-1] = (u[2:] - u[:-2]) / (2.0 * h)
        d[0] = (u[1] - u[0]) / h
        d[-1] = (u[-1] - u[-2]) / h

    d = np.moveaxis(d, 0, ax)
    return d.reshape(-1) if flat else d
