"""Staggered (MAC) rectangular grid, field containers and discrete operators.

Layout
------
Cell-centred scalars are stored as ``(nx, ny)`` arrays indexed ``[i, j]`` for
the cell with centre ``((i + 1/2) hx, (j + 1/2) hy)``.  Flattening is
row-major, so cell ``(i, j)`` has flat index ``i * ny + j``.

Face-centred vectors keep the x-component on x-faces, shape ``(nx + 1, ny)``,
and the y-component on y-faces, shape ``(nx, ny + 1)``.

Boundary faces are enumerated in the fixed order left (``x = 0``, by ``j``),
right (``x = Lx``), bottom (``y = 0``, by ``i``), top (``y = Ly``).  Every
per-boundary-face sequence in the package uses this order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp


class GridMismatchError(ValueError):
    """Fields defined on different grids were combined."""


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    Lx: float = 1.0
    Ly: float = 1.0

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"grid needs at least 4x4 cells, got {self.nx}x{self.ny}")
        if not (self.Lx > 0 and self.Ly > 0):
            raise ValueError("domain lengths must be positive")

    @property
    def hx(self) -> float:
        return self.Lx / self.nx

    @property
    def hy(self) -> float:
        return self.Ly / self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def area(self) -> float:
        return self.Lx * self.Ly

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def ncells(self) -> int:
        return self.nx * self.ny

    @property
    def n_boundary(self) -> int:
        return 2 * (self.nx + self.ny)

    # -- coordinates -------------------------------------------------------

    @cached_property
    def xc(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.hx

    @cached_property
    def yc(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.hy

    @cached_property
    def xf(self) -> np.ndarray:
        return np.arange(self.nx + 1) * self.hx

    @cached_property
    def yf(self) -> np.ndarray:
        return np.arange(self.ny + 1) * self.hy

    def cell_centres(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xc, self.yc, indexing="ij")

    def xface_centres(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xf, self.yc, indexing="ij")

    def yface_centres(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xc, self.yf, indexing="ij")

    def boundary_midpoints(self) -> tuple[np.ndarray, np.ndarray]:
        zx, zy = np.zeros(self.ny), np.zeros(self.nx)
        x = np.concatenate([zx, zx + self.Lx, self.xc, self.xc])
        y = np.concatenate([self.yc, self.yc, zy, zy + self.Ly])
        return x, y

    def boundary_lengths(self) -> np.ndarray:
        return np.concatenate([
            np.full(2 * self.ny, self.hy),
            np.full(2 * self.nx, self.hx),
        ])

    def boundary_normal_spacing(self) -> np.ndarray:
        """Cell width normal to each boundary face."""
        return np.concatenate([
            np.full(2 * self.ny, self.hx),
            np.full(2 * self.nx, self.hy),
        ])

    def boundary_cells(self, values: np.ndarray) -> np.ndarray:
        """Values of the cells adjacent to each boundary face, in boundary order."""
        return np.concatenate([values[0, :], values[-1, :], values[:, 0], values[:, -1]])

    def split_boundary(self, b: np.ndarray):
        """Split a boundary sequence into (left, right, bottom, top)."""
        ny, nx = self.ny, self.nx
        return b[:ny], b[ny:2 * ny], b[2 * ny:2 * ny + nx], b[2 * ny + nx:]

    # -- sampling ----------------------------------------------------------

    def sample(self, fn: Callable) -> ScalarField:
        X, Y = self.cell_centres()
        return ScalarField(np.asarray(fn(X, Y), dtype=float) * np.ones(self.shape), self)

    def sample_vector(self, fx: Callable, fy: Callable) -> VectorField:
        Xx, Yx = self.xface_centres()
        Xy, Yy = self.yface_centres()
        ux = np.asarray(fx(Xx, Yx), dtype=float) * np.ones(Xx.shape)
        uy = np.asarray(fy(Xy, Yy), dtype=float) * np.ones(Xy.shape)
        return VectorField(ux, uy, self)

    def sample_boundary(self, fn: Callable) -> np.ndarray:
        x, y = self.boundary_midpoints()
        return np.asarray(fn(x, y), dtype=float) * np.ones(self.n_boundary)

    def zeros(self) -> ScalarField:
        return ScalarField(np.zeros(self.shape), self)

    def zero_vector(self) -> VectorField:
        return VectorField(np.zeros((self.nx + 1, self.ny)), np.zeros((self.nx, self.ny + 1)), self)

    # -- sparse operators ----------------------------------------------------

    @cached_property
    def neumann_laplacian(self) -> sp.csr_matrix:
        """Matrix of ``-Delta_h`` with zero-flux walls acting on flattened cells."""
        return (_second_difference(self.nx, self.hx, self.ny, axis=0)
                + _second_difference(self.ny, self.hy, self.nx, axis=1)).tocsr()


def _second_difference(n, h, m, axis):
    # 1D -d2/dx2 with zero-flux ends, Kronecker-lifted onto the 2D cell ordering.
    main = np.full(n, 2.0)
    main[0] = main[-1] = 1.0
    T = sp.diags([-np.ones(n - 1), main, -np.ones(n - 1)], [-1, 0, 1]) / h**2
    I = sp.identity(m)
    return sp.kron(T, I) if axis == 0 else sp.kron(I, T)


# ---------------------------------------------------------------------------
# fields


@dataclass(eq=False)
class ScalarField:
    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            if self.values.size == self.grid.ncells:
                self.values = self.values.reshape(self.grid.shape)
            else:
                raise GridMismatchError(
                    f"scalar field of shape {self.values.shape} on grid {self.grid.shape}")

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def copy(self) -> ScalarField:
        return ScalarField(self.values.copy(), self.grid)

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_area)

    def __add__(self, other):
        if isinstance(other, ScalarField):
            check_same_grid(self, other)
            return ScalarField(self.values + other.values, self.grid)
        return ScalarField(self.values + other, self.grid)

    def __sub__(self, other):
        if isinstance(other, ScalarField):
            check_same_grid(self, other)
            return ScalarField(self.values - other.values, self.grid)
        return ScalarField(self.values - other, self.grid)

    def __mul__(self, s):
        return ScalarField(self.values * s, self.grid)

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(-self.values, self.grid)


@dataclass(eq=False)
class VectorField:
    ux: np.ndarray
    uy: np.ndarray
    grid: Grid
    no_slip: bool = field(default=False)

    def __post_init__(self):
        self.ux = np.asarray(self.ux, dtype=float)
        self.uy = np.asarray(self.uy, dtype=float)
        g = self.grid
        if self.ux.shape != (g.nx + 1, g.ny) or self.uy.shape != (g.nx, g.ny + 1):
            raise GridMismatchError(
                f"vector field shapes {self.ux.shape}, {self.uy.shape} do not fit grid {g.shape}")
        if self.no_slip:
            self.ux[0, :] = self.ux[-1, :] = 0.0
            self.uy[:, 0] = self.uy[:, -1] = 0.0

    def copy(self) -> VectorField:
        return VectorField(self.ux.copy(), self.uy.copy(), self.grid, self.no_slip)

    def outward_boundary(self) -> np.ndarray:
        """Outward normal component on every boundary face, in boundary order."""
        return np.concatenate([-self.ux[0, :], self.ux[-1, :], -self.uy[:, 0], self.uy[:, -1]])

    def interior(self) -> VectorField:
        """Copy with all boundary-normal faces set to zero."""
        return VectorField(self.ux.copy(), self.uy.copy(), self.grid, no_slip=True)

    def dot(self, other: VectorField) -> float:
        """Face-weighted inner product, each face carrying a cell-sized volume."""
        check_same_grid(self, other)
        return float((np.vdot(self.ux, other.ux) + np.vdot(self.uy, other.uy)) * self.grid.cell_area)

    def norm(self) -> float:
        return self.dot(self) ** 0.5

    def max_abs(self) -> float:
        return float(max(np.abs(self.ux).max(), np.abs(self.uy).max()))

    def __add__(self, other: VectorField) -> VectorField:
        check_same_grid(self, other)
        return VectorField(self.ux + other.ux, self.uy + other.uy, self.grid)

    def __sub__(self, other: VectorField) -> VectorField:
        check_same_grid(self, other)
        return VectorField(self.ux - other.ux, self.uy - other.uy, self.grid)

    def __mul__(self, s) -> VectorField:
        return VectorField(self.ux * s, self.uy * s, self.grid)

    __rmul__ = __mul__

    def __neg__(self):
        return VectorField(-self.ux, -self.uy, self.grid)


def check_same_grid(*fields) -> Grid:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridMismatchError(f"grid {f.grid} differs from {grid}")
    return grid


# ---------------------------------------------------------------------------
# boundary rules


@dataclass(frozen=True, eq=False)
class BoundaryRule:
    """Closure used to fill boundary-face gradients from ghost cells.

    ``kind`` is ``"robin"`` (``d_n f + varsigma f = values``; plain Neumann is
    ``varsigma = 0``) or ``"dirichlet0"`` (``f = 0`` on the wall).
    """

    kind: str
    values: np.ndarray | None = None
    varsigma: float = 0.0

    @classmethod
    def neumann(cls, grid: Grid, g=0.0) -> BoundaryRule:
        return cls("robin", np.broadcast_to(np.asarray(g, float), (grid.n_boundary,)).copy(), 0.0)

    @classmethod
    def robin(cls, grid: Grid, varsigma: float, eta=0.0) -> BoundaryRule:
        if varsigma < 0:
            raise ValueError("varsigma must be non-negative")
        return cls("robin", np.broadcast_to(np.asarray(eta, float), (grid.n_boundary,)).copy(),
                   float(varsigma))

    @classmethod
    def zero_dirichlet(cls) -> BoundaryRule:
        return cls("dirichlet0")

    def normal_derivative(self, f: ScalarField) -> np.ndarray:
        """Outward normal derivative on each boundary face."""
        g = f.grid
        fb = g.boundary_cells(f.values)
        h = g.boundary_normal_spacing()
        if self.kind == "dirichlet0":
            return -2.0 * fb / h
        if self.kind != "robin":
            raise ValueError(f"unknown boundary rule {self.kind!r}")
        if self.values.shape != (g.n_boundary,):
            raise GridMismatchError("boundary data length does not match the grid")
        # centred ghost closure: (ghost - f_b)/h + varsigma (ghost + f_b)/2 = eta
        return (self.values - self.varsigma * fb) / (1.0 + 0.5 * self.varsigma * h)

    def face_values(self, f: ScalarField) -> np.ndarray:
        """Boundary-face values reconstructed from the ghost closure."""
        h = f.grid.boundary_normal_spacing()
        return f.grid.boundary_cells(f.values) + 0.5 * h * self.normal_derivative(f)


# ---------------------------------------------------------------------------
# operators


def gradient(f: ScalarField, bc: BoundaryRule) -> VectorField:
    """Face gradient: centred differences inside, ghost closure on the walls."""
    g = f.grid
    v = f.values
    if not np.all(np.isfinite(v)):
        raise ValueError("gradient of a non-finite field")
    ux = np.empty((g.nx + 1, g.ny))
    uy = np.empty((g.nx, g.ny + 1))
    ux[1:-1] = np.diff(v, axis=0) / g.hx
    uy[:, 1:-1] = np.diff(v, axis=1) / g.hy
    left, right, bottom, top = g.split_boundary(bc.normal_derivative(f))
    ux[0], ux[-1] = -left, right
    uy[:, 0], uy[:, -1] = -bottom, top
    return VectorField(ux, uy, g)


def divergence(v: VectorField) -> ScalarField:
    g = v.grid
    d = np.diff(v.ux, axis=0) / g.hx + np.diff(v.uy, axis=1) / g.hy
    return ScalarField(d, g)


def boundary_integral(grid: Grid, values) -> float:
    """Midpoint rule for a line integral over the whole boundary."""
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.n_boundary,):
        raise GridMismatchError(f"expected {grid.n_boundary} boundary values, got {values.shape}")
    return float(np.dot(values, grid.boundary_lengths()))


def l2_norm(f: ScalarField) -> float:
    return float(np.sqrt(np.sum(f.values**2) * f.grid.cell_area))


# ---------------------------------------------------------------------------
# binary snapshots
#
# little-endian header: magic b"NPNS", version u32, nx u32, ny u32,
# kind u32, time f64; then raw f64 payload.  Scalars are the row-major
# (nx, ny) cell array; velocity is ux row-major followed by uy row-major.

SNAPSHOT_MAGIC = b"NPNS"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIIIId")


class FieldKind(IntEnum):
    CONCENTRATION = 1
    POTENTIAL = 2
    CHARGE = 3
    PRESSURE = 4
    VELOCITY = 5


def write_snapshot(path, field_, kind: FieldKind, time: float) -> None:
    g = field_.grid
    if kind == FieldKind.VELOCITY:
        payload = np.concatenate([field_.ux.ravel(), field_.uy.ravel()])
    else:
        payload = field_.values.ravel()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, g.nx, g.ny, int(kind), float(time)))
        fh.write(payload.astype("<f8").tobytes())


def read_snapshot(path, Lx: float = 1.0, Ly: float = 1.0):
    """Read a snapshot; returns ``(field, kind, time)``."""
    data = Path(path).read_bytes()
    magic, version, nx, ny, kind, time = _HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not an NPNS snapshot")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    grid = Grid(nx, ny, Lx, Ly)
    payload = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(float)
    kind = FieldKind(kind)
    if kind == FieldKind.VELOCITY:
        n = (nx + 1) * ny
        f = VectorField(payload[:n].reshape(nx + 1, ny), payload[n:].reshape(nx, ny + 1), grid)
    else:
        f = ScalarField(payload.reshape(nx, ny), grid)
    return f, kind, time
