"""Incompressible Navier-Stokes on the MAC grid with no-slip walls.

A step is explicit advection + force + noise, implicit viscosity, then a
Chorin projection.  Advection uses the skew-symmetric average of the
convective and divergence forms, so ``<advect(u) v, v> = 0`` holds to
rounding for every discrete ``u`` and ``v``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .fastsolve import SeparableSolver, half_dirichlet_1d, node_dirichlet_1d
from .grid import BoundaryRule, Grid, ScalarField, VectorField, check_same_grid, divergence, gradient
from .poisson import pcg, solve_poisson


@dataclass(eq=False)
class FluidState:
    u: VectorField
    p: ScalarField
    mu: float = 1.0
    kappa: float = 1.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("viscosity must be positive")


# ---------------------------------------------------------------------------
# viscous operator on interior velocity unknowns


def _node_dirichlet(n):
    # unknowns at nodes 1..n-1, fixed zeros at nodes 0 and n
    m = n - 1
    return sp.diags([np.ones(m - 1), -2.0 * np.ones(m), np.ones(m - 1)], [-1, 0, 1])


def _half_dirichlet(n):
    # unknowns at cell centres, zero wall half a cell beyond each end (ghost = -u)
    d = -2.0 * np.ones(n)
    d[0] = d[-1] = -3.0
    return sp.diags([np.ones(n - 1), d, np.ones(n - 1)], [-1, 0, 1])


@lru_cache(maxsize=32)
def velocity_laplacians(grid: Grid):
    """Sparse ``Delta_h`` for interior ux unknowns ``(nx-1, ny)`` and uy ``(nx, ny-1)``."""
    nx, ny, hx, hy = grid.nx, grid.ny, grid.hx, grid.hy
    Lx = (sp.kron(_node_dirichlet(nx), sp.identity(ny)) / hx**2
          + sp.kron(sp.identity(nx - 1), _half_dirichlet(ny)) / hy**2).tocsr()
    Ly = (sp.kron(_half_dirichlet(nx), sp.identity(ny - 1)) / hx**2
          + sp.kron(sp.identity(nx), _node_dirichlet(ny)) / hy**2).tocsr()
    return Lx, Ly


@lru_cache(maxsize=32)
def _viscous_system(grid: Grid, nu_dt: float):
    Lx, Ly = velocity_laplacians(grid)
    nx, ny, hx, hy = grid.nx, grid.ny, grid.hx, grid.hy
    # the same operators as separable 1D factors, for the exact preconditioner
    factors = ((node_dirichlet_1d(nx, hx), half_dirichlet_1d(ny, hy)),
               (half_dirichlet_1d(nx, hx), node_dirichlet_1d(ny, hy)))
    out = []
    for L, (Ax, Ay) in zip((Lx, Ly), factors):
        M = (sp.identity(L.shape[0]) - nu_dt * L).tocsr()
        out.append((M, SeparableSolver(nu_dt * Ax, nu_dt * Ay, shift=1.0)))
    return out


def grad_norm_sq(u: VectorField) -> float:
    """``|grad u|^2`` consistent with the viscous operator, ``-<Delta_h u, u>``."""
    g = u.grid
    Lx, Ly = velocity_laplacians(g)
    a = u.ux[1:-1].ravel()
    b = u.uy[:, 1:-1].ravel()
    return float(-(a @ (Lx @ a) + b @ (Ly @ b)) * g.cell_area)


def kinetic_energy(u: VectorField) -> float:
    return 0.5 * u.dot(u)


# ---------------------------------------------------------------------------
# advection


def advect(u: VectorField, v: VectorField | None = None) -> VectorField:
    """Skew-symmetric transport ``N(u) v`` (``v = u`` by default), zero on walls."""
    if v is None:
        v = u
    g = check_same_grid(u, v)
    hx, hy = g.hx, g.hy
    area = g.cell_area
    ux, uy = u.ux, u.uy

    # x-momentum control volumes sit on interior x-faces i = 1..nx-1
    vx = v.ux
    Fc = 0.5 * (ux[:-1] + ux[1:]) * hy            # flux through cell centres, (nx, ny)
    vc = 0.5 * (vx[:-1] + vx[1:])
    Fn = 0.5 * (uy[:-1, :] + uy[1:, :]) * hx      # flux through corners, (nx-1, ny+1)
    vn = np.zeros((g.nx - 1, g.ny + 1))
    vn[:, 1:-1] = 0.5 * (vx[1:-1, :-1] + vx[1:-1, 1:])
    conv = (Fc[1:] * vc[1:] - Fc[:-1] * vc[:-1]) + (Fn[:, 1:] * vn[:, 1:] - Fn[:, :-1] * vn[:, :-1])
    divF = (Fc[1:] - Fc[:-1]) + (Fn[:, 1:] - Fn[:, :-1])
    ax = np.zeros_like(vx)
    ax[1:-1] = (conv - 0.5 * divF * vx[1:-1]) / area

    # y-momentum control volumes sit on interior y-faces j = 1..ny-1
    vy = v.uy
    Gc = 0.5 * (uy[:, :-1] + uy[:, 1:]) * hx      # (nx, ny)
    wc = 0.5 * (vy[:, :-1] + vy[:, 1:])
    Ge = 0.5 * (ux[:, :-1] + ux[:, 1:]) * hy      # corners, (nx+1, ny-1)
    we = np.zeros((g.nx + 1, g.ny - 1))
    we[1:-1, :] = 0.5 * (vy[:-1, 1:-1] + vy[1:, 1:-1])
    conv = (Gc[:, 1:] * wc[:, 1:] - Gc[:, :-1] * wc[:, :-1]) + (Ge[1:] * we[1:] - Ge[:-1] * we[:-1])
    divG = (Gc[:, 1:] - Gc[:, :-1]) + (Ge[1:] - Ge[:-1])
    ay = np.zeros_like(vy)
    ay[:, 1:-1] = (conv - 0.5 * divG * vy[:, 1:-1]) / area
    return VectorField(ax, ay, g)


# ---------------------------------------------------------------------------


def coulomb_force(rho: ScalarField, psi: ScalarField, kappa: float,
                  bc: BoundaryRule | None = None) -> VectorField:
    """Face force ``-kappa rho_face grad psi``.

    ``rho`` is averaged onto interior faces and taken from the adjacent cell
    on wall faces; the wall gradient comes from ``bc`` (zero-flux by default).
    """
    g = check_same_grid(rho, psi)
    if bc is None:
        bc = BoundaryRule.neumann(g)
    G = gradient(psi, bc)
    r = rho.values
    rx = np.empty((g.nx + 1, g.ny))
    ry = np.empty((g.nx, g.ny + 1))
    rx[1:-1] = 0.5 * (r[:-1] + r[1:])
    rx[0], rx[-1] = r[0], r[-1]
    ry[:, 1:-1] = 0.5 * (r[:, :-1] + r[:, 1:])
    ry[:, 0], ry[:, -1] = r[:, 0], r[:, -1]
    return VectorField(-kappa * rx * G.ux, -kappa * ry * G.uy, g)


def electrochemical_force(species, psi: ScalarField, u: VectorField, kappa: float,
                          delta: float = 1e-12) -> VectorField:
    """Coulomb force in the form ``-kappa sum_i c_i grad theta_i + kappa grad sum_i c_i``.

    ``theta_i = log(c_i + delta) + z_i psi``.  In the continuum this equals
    ``-kappa rho grad psi``.  Discretely the first term vanishes at a Boltzmann
    equilibrium and the second is an exact grid gradient, so the projected
    force is zero there and no spurious current is driven.  Face values of
    ``c_i`` are upwinded with ``u`` (arithmetic mean where ``u = 0``), matching
    the advective ion flux so that the energy exchanged between the fluid and
    the ions cancels exactly.  Wall faces carry no force.
    """
    g = psi.grid
    fx = np.zeros((g.nx + 1, g.ny))
    fy = np.zeros((g.nx, g.ny + 1))
    sx = np.sign(u.ux[1:-1])
    sy = np.sign(u.uy[:, 1:-1])
    total = 0.0
    for s in species:
        c = s.c.values
        th = np.log(c + delta) + s.z * psi.values
        cx = np.where(sx > 0, c[:-1], np.where(sx < 0, c[1:], 0.5 * (c[:-1] + c[1:])))
        cy = np.where(sy > 0, c[:, :-1], np.where(sy < 0, c[:, 1:], 0.5 * (c[:, :-1] + c[:, 1:])))
        fx[1:-1] -= cx * np.diff(th, axis=0) / g.hx
        fy[:, 1:-1] -= cy * np.diff(th, axis=1) / g.hy
        total = total + c
    fx[1:-1] += np.diff(total, axis=0) / g.hx
    fy[:, 1:-1] += np.diff(total, axis=1) / g.hy
    return VectorField(kappa * fx, kappa * fy, g)


def project_divergence_free(v: VectorField, tol: float = 1e-13):
    """Discrete Leray projection; returns ``(v - grad q, q)`` with ``Delta_h q = div v``.

    Wall-normal components of ``v`` are ignored (treated as zero).
    """
    g = v.grid
    w = v.interior()
    d = divergence(w)
    q = solve_poisson(-d, 0.0, 0.0, tol=tol, project=True)
    G = gradient(q, BoundaryRule.neumann(g))
    out = VectorField(w.ux - G.ux, w.uy - G.uy, g, no_slip=True)
    return out, q


def project_many(ux: np.ndarray, uy: np.ndarray, grid: Grid):
    """Project a stack of face fields ``(k, nx+1, ny)``, ``(k, nx, ny+1)`` at once."""
    from .poisson import preconditioner
    ux = np.array(ux, dtype=float)
    uy = np.array(uy, dtype=float)
    ux[:, 0] = ux[:, -1] = 0.0
    uy[:, :, 0] = uy[:, :, -1] = 0.0
    div = np.diff(ux, axis=1) / grid.hx + np.diff(uy, axis=2) / grid.hy
    # -Delta_h q = -div v with zero-flux walls; the pseudo-inverse fixes the gauge
    q = preconditioner(grid, 0.0, "fdm").solve_grid(-div)
    ux[:, 1:-1] -= np.diff(q, axis=1) / grid.hx
    uy[:, :, 1:-1] -= np.diff(q, axis=2) / grid.hy
    return ux, uy


def viscous_solve(w: VectorField, nu_dt: float, tol: float = 1e-13) -> VectorField:
    """Solve ``(I - nu_dt Delta_h) u = w`` on interior faces."""
    g = w.grid
    (Mx, px), (My, py) = _viscous_system(g, float(nu_dt))
    bx = w.ux[1:-1].ravel()
    by = w.uy[:, 1:-1].ravel()
    ax, _ = pcg(Mx, bx, precond=px, tol=tol)
    ay, _ = pcg(My, by, precond=py, tol=tol)
    out = g.zero_vector()
    out.ux[1:-1] = ax.reshape(g.nx - 1, g.ny)
    out.uy[:, 1:-1] = ay.reshape(g.nx, g.ny - 1)
    return out


def step_velocity(st: FluidState, force: VectorField, noise_increment: VectorField | None,
                  dt: float, *, adv_factor: float = 1.0, return_loss: bool = False):
    """Advance the velocity by one step.

    ``noise_increment`` must already contain the Wiener increments.  The
    stored pressure is the projection multiplier divided by ``dt``.  With
    ``return_loss`` the result is ``(state, loss)``, ``loss`` being the
    kinetic energy the viscous solve removes: ``1/2 |P w|^2 - 1/2 |u_new|^2``
    for the explicit update ``w``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    u = st.u
    rhs = force - advect(u) * adv_factor if adv_factor != 0.0 else force.copy()
    w = u + rhs * dt
    if noise_increment is not None:
        w = w + noise_increment
    w = w.interior()
    if return_loss:
        pwx, pwy = project_many(w.ux[None], w.uy[None], w.grid)
        before = 0.5 * (np.sum(pwx**2) + np.sum(pwy**2)) * w.grid.cell_area
    w = viscous_solve(w, st.mu * dt)
    u_new, q = project_divergence_free(w)
    new = FluidState(u_new, q * (1.0 / dt), st.mu, st.kappa)
    if return_loss:
        return new, float(before - kinetic_energy(u_new))
    return new


# ---------------------------------------------------------------------------
# initial velocity fields


def streamfunction_velocity(grid: Grid, stream) -> VectorField:
    """Velocity from a streamfunction sampled at cell corners.

    ``ux = d(stream)/dy`` and ``uy = -d(stream)/dx`` by corner differences, which
    is exactly divergence-free on the grid; the streamfunction should vanish on
    the walls for a no-slip-compatible field.
    """
    X, Y = np.meshgrid(grid.xf, grid.yf, indexing="ij")
    s = np.asarray(stream(X, Y), float) * np.ones(X.shape)
    ux = np.diff(s, axis=1) / grid.hy
    uy = -np.diff(s, axis=0) / grid.hx
    return VectorField(ux, uy, grid, no_slip=True)


def vortex_mode(grid: Grid, amplitude: float = 1.0) -> VectorField:
    """Single cell vortex from ``sin^2(pi x / Lx) sin^2(pi y / Ly)``."""
    kx, ky = np.pi / grid.Lx, np.pi / grid.Ly
    return streamfunction_velocity(
        grid, lambda x, y: amplitude / kx * np.sin(kx * x) ** 2 * np.sin(ky * y) ** 2)
