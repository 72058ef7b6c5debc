"""Electrostatic potential: ``-Delta psi = rho`` with Robin or Neumann walls.

The boundary condition ``d_n psi + varsigma psi = eta`` is closed with a
centred ghost cell, which keeps the 5-point operator symmetric.  For
``varsigma > 0`` the system is SPD; for ``varsigma = 0`` it is singular with
the constants as kernel and the solution is gauged to zero mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fastsolve import SeparableSolver, neumann_1d
from .grid import BoundaryRule, Grid, ScalarField, VectorField, boundary_integral, gradient


class CompatibilityError(ValueError):
    """Neumann data violate ``int rho + int eta = 0``."""

    def __init__(self, defect: float, message: str | None = None):
        self.defect = float(defect)
        super().__init__(message or f"incompatible Neumann data, defect {self.defect:.6g}")


class SolverError(RuntimeError):
    """An iterative solve did not reach its tolerance."""

    def __init__(self, message: str, residual_history=()):
        self.residual_history = list(residual_history)
        super().__init__(message)


# ---------------------------------------------------------------------------
# preconditioned conjugate gradients


def pcg(A, b, *, precond=None, x0=None, tol=1e-10, maxiter=500, nullspace_constant=False):
    """Preconditioned CG for SPD (or PSD with constant kernel) systems.

    Returns ``(x, residual_history)`` where the history holds the 2-norm of
    the residual at every iterate, starting with ``x0``.  Converged when
    ``|r| <= tol * |b|``.
    """
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros_like(b), [0.0]
    r = b - A @ x
    history = [np.linalg.norm(r)]
    if history[-1] <= tol * bnorm:
        return x, history

    def apply_m(v):
        z = v if precond is None else precond(v)
        if nullspace_constant:
            z = z - z.mean()
        return z

    z = apply_m(r)
    p = z.copy()
    rz = r @ z
    for _ in range(maxiter):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        history.append(np.linalg.norm(r))
        if history[-1] <= tol * bnorm:
            return x, history
        z = apply_m(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(
        f"CG stalled at residual {history[-1] / bnorm:.3e} (tol {tol:.1e}) after {len(history) - 1} iterations",
        history)


@lru_cache(maxsize=64)
def poisson_matrix(grid: Grid, varsigma: float) -> sp.csr_matrix:
    """``-Delta_h`` with the Robin ghost closure folded onto the diagonal."""
    h = grid.boundary_normal_spacing()
    coef = varsigma / ((1.0 + 0.5 * varsigma * h) * h)
    diag = np.zeros(grid.shape)
    left, right, bottom, top = grid.split_boundary(coef)
    diag[0, :] += left
    diag[-1, :] += right
    diag[:, 0] += bottom
    diag[:, -1] += top
    return (grid.neumann_laplacian + sp.diags(diag.ravel())).tocsr()


def robin_source(grid: Grid, eta: np.ndarray, varsigma: float) -> np.ndarray:
    """Cell source produced by the boundary datum (flattened)."""
    h = grid.boundary_normal_spacing()
    s = np.asarray(eta, float) / ((1.0 + 0.5 * varsigma * h) * h)
    out = np.zeros(grid.shape)
    left, right, bottom, top = grid.split_boundary(s)
    out[0, :] += left
    out[-1, :] += right
    out[:, 0] += bottom
    out[:, -1] += top
    return out.ravel()


@lru_cache(maxsize=64)
def _factorized(grid: Grid, varsigma: float):
    A = poisson_matrix(grid, varsigma)
    if varsigma == 0.0:
        # tiny shift makes the factorisation regular; the kernel is removed by the gauge
        A = A + 1e-8 * A.diagonal().mean() * sp.identity(A.shape[0])
    return spla.splu(A.tocsc()).solve


@lru_cache(maxsize=64)
def _fdm(grid: Grid, varsigma: float):
    Ax = neumann_1d(grid.nx, grid.hx)
    Ay = neumann_1d(grid.ny, grid.hy)
    for A, h in ((Ax, grid.hx), (Ay, grid.hy)):
        coef = varsigma / ((1.0 + 0.5 * varsigma * h) * h)
        A[0, 0] += coef
        A[-1, -1] += coef
    return SeparableSolver(Ax, Ay)


@lru_cache(maxsize=64)
def _jacobi(grid: Grid, varsigma: float):
    d = poisson_matrix(grid, varsigma).diagonal()
    return lambda r: r / d


def preconditioner(grid: Grid, varsigma: float, kind: str = "fdm"):
    """``fdm`` (exact separable inverse), ``factorized`` (sparse LU), ``jacobi`` or ``none``."""
    if kind == "fdm":
        return _fdm(grid, float(varsigma))
    if kind == "factorized":
        return _factorized(grid, float(varsigma))
    if kind == "jacobi":
        return _jacobi(grid, float(varsigma))
    if kind == "none":
        return None
    raise ValueError(f"unknown preconditioner {kind!r}")


# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ElectroState:
    psi: ScalarField
    rho: ScalarField
    eta: np.ndarray
    varsigma: float = 1.0
    residual_history: list = field(default_factory=list)

    def boundary_rule(self) -> BoundaryRule:
        return BoundaryRule.robin(self.psi.grid, self.varsigma, self.eta)

    def field(self) -> VectorField:
        return electric_field(self.psi, self.boundary_rule())


def compatibility_defect(rho: ScalarField, eta) -> float:
    """``int rho + int eta dS``; zero for solvable Neumann data."""
    return rho.integral() + boundary_integral(rho.grid, eta)


def solve_poisson(rho: ScalarField, eta=0.0, varsigma: float = 1.0, tol: float = 1e-10, *,
                  project: bool = False, x0: ScalarField | None = None,
                  precond: str = "fdm", maxiter: int = 500,
                  return_state: bool = False):
    """Solve ``-Delta psi = rho`` with ``d_n psi + varsigma psi = eta``.

    Parameters
    ----------
    rho : ScalarField
        Charge density.
    eta : float or array of boundary-face values
        Applied boundary datum.
    varsigma : float
        Double-layer capacitance; ``0`` gives the pure Neumann problem.
    tol : float
        Relative residual target of the discrete system.
    project : bool
        For ``varsigma = 0`` only: remove the compatibility defect from
        ``rho`` as a uniform shift instead of raising.

    Returns
    -------
    ScalarField, or ElectroState when ``return_state`` is set.

    Raises
    ------
    CompatibilityError
        ``varsigma = 0`` and ``int rho + int eta`` is not zero (and not projected).
    SolverError
        CG did not converge within ``maxiter`` iterations.
    """
    grid = rho.grid
    varsigma = float(varsigma)
    if varsigma < 0:
        raise ValueError("varsigma must be non-negative")
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (grid.n_boundary,)).copy()
    rho_vals = rho.values
    if varsigma == 0.0:
        defect = compatibility_defect(rho, eta)
        scale = np.abs(rho.values).sum() * grid.cell_area + boundary_integral(grid, np.abs(eta))
        if abs(defect) > 1e-10 * scale:
            if not project:
                raise CompatibilityError(defect)
        # also strip the rounding-level remainder so CG sees a consistent system
        rho_vals = rho_vals - defect / grid.area

    A = poisson_matrix(grid, varsigma)
    b = rho_vals.ravel() + robin_source(grid, eta, varsigma)
    if varsigma == 0.0:
        b = b - b.mean()
    x, hist = pcg(A, b, precond=preconditioner(grid, varsigma, precond),
                  x0=None if x0 is None else x0.flat(), tol=tol, maxiter=maxiter,
                  nullspace_constant=varsigma == 0.0)
    if varsigma == 0.0:
        x = x - x.mean()
    psi = ScalarField(x.reshape(grid.shape), grid)
    if return_state:
        return ElectroState(psi, ScalarField(rho_vals.copy(), grid), eta, varsigma, hist)
    return psi


def electric_field(psi: ScalarField, bc: BoundaryRule) -> VectorField:
    """``E = -grad psi`` using the same wall closure as the solve."""
    return -gradient(psi, bc)


def discrete_residual(psi: ScalarField, rho: ScalarField, eta, varsigma: float) -> float:
    """``|A psi - rho - b(eta)|_2`` of the discrete system (flattened 2-norm)."""
    grid = psi.grid
    eta = np.broadcast_to(np.asarray(eta, float), (grid.n_boundary,))
    r = poisson_matrix(grid, float(varsigma)) @ psi.flat() - rho.flat() - robin_source(grid, eta, varsigma)
    return float(np.linalg.norm(r))


# ---------------------------------------------------------------------------
# manufactured-solution convergence


def manufactured_case(grid: Grid, varsigma: float):
    """``psi* = cos(pi x) cos(pi y)`` on ``[0, Lx] x [0, Ly]`` (unit square intended).

    Returns ``(rho, eta, psi_exact)`` with ``eta`` the exact Robin trace.
    """
    kx, ky = np.pi / grid.Lx, np.pi / grid.Ly
    exact = grid.sample(lambda x, y: np.cos(kx * x) * np.cos(ky * y))
    rho = exact * (kx**2 + ky**2)
    x, y = grid.boundary_midpoints()
    psi_b = np.cos(kx * x) * np.cos(ky * y)
    # outward normal derivatives of psi* vanish on all four walls of the box
    eta = varsigma * psi_b
    if varsigma == 0.0:
        exact = exact - exact.values.mean()
    return rho, eta, exact


def mms_convergence(ns=(32, 64, 128), varsigma: float = 1.0, tol: float = 1e-12):
    """L2 errors of the manufactured solution on the given resolutions.

    Returns ``(errors, ratios)``; each ratio is ``err(h) / err(h/2)``.
    """
    errors = []
    for n in ns:
        grid = Grid(n, n)
        rho, eta, exact = manufactured_case(grid, varsigma)
        psi = solve_poisson(rho, eta, varsigma, tol=tol)
        diff = psi.values - exact.values
        errors.append(float(np.sqrt(np.sum(diff**2) * grid.cell_area)))
    ratios = [errors[k] / errors[k + 1] for k in range(len(errors) - 1)]
    return errors, ratios
