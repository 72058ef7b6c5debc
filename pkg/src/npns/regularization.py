"""Cut-off, mollifier, truncated right-hand side and stopping-time monitors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .grid import BoundaryRule, Grid, ScalarField, VectorField, divergence
from .transport import IonState, ion_flux
from .fluid import FluidState, advect, coulomb_force, grad_norm_sq, velocity_laplacians

# exponent of the W^{1,p} norm used for grad psi
W1P_EXPONENT = 3.5


def _smooth_step(t):
    return math.exp(-1.0 / t) if t > 0 else 0.0


def cutoff_phi(x: float, R: float) -> float:
    """Smooth cut-off: 1 on ``[0, R]``, 0 on ``[2R, inf)``, monotone between."""
    if not R > 0:
        raise ValueError("R must be positive")
    if x <= R:
        return 1.0
    if x >= 2.0 * R:
        return 0.0
    s = (x - R) / R
    a, b = _smooth_step(1.0 - s), _smooth_step(s)
    return a / (a + b)


def gaussian_kernel(sigma_cells: float) -> np.ndarray:
    radius = max(1, int(math.ceil(4.0 * sigma_cells)))
    k = np.arange(-radius, radius + 1, dtype=float)
    w = np.exp(-0.5 * (k / sigma_cells) ** 2)
    return w / w.sum()


def mollify(f: ScalarField, eps: float) -> ScalarField:
    """Convolve with a normalised Gaussian of standard deviation ``eps``.

    The field is mirror-extended across the walls before convolving and
    restricted afterwards, so constants and cell sums are preserved and the
    operator is a symmetric contraction.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    g = f.grid
    out = correlate1d(f.values, gaussian_kernel(eps / g.hx), axis=0, mode="reflect")
    out = correlate1d(out, gaussian_kernel(eps / g.hy), axis=1, mode="reflect")
    return ScalarField(out, g)


# ---------------------------------------------------------------------------
# norms entering the cut-offs


def grad_psi_w1p(psi: ScalarField, p: float = W1P_EXPONENT) -> float:
    """``(|grad psi|_p^p + |Hess psi|_p^p)^(1/p)`` from cell-centred differences.

    Centred differences inside, second-order one-sided at the walls; exact
    for quadratic potentials.
    """
    g = psi.grid
    px, py = np.gradient(psi.values, g.hx, g.hy, edge_order=2)
    pxx, pxy = np.gradient(px, g.hx, g.hy, edge_order=2)
    pyx, pyy = np.gradient(py, g.hx, g.hy, edge_order=2)
    grad = np.sqrt(px**2 + py**2)
    hess = np.sqrt(pxx**2 + pxy**2 + pyx**2 + pyy**2)
    total = (np.sum(grad**p) + np.sum(hess**p)) * g.cell_area
    return float(total ** (1.0 / p))


@dataclass
class Tendencies:
    """Term-by-term right-hand side of the (optionally truncated) system."""

    ion_advection: list   # -div(phi_u u c), per species, cell arrays
    ion_drift: list       # phi_psi div(a z c grad psi)
    ion_diffusion: list   # div(a grad c)
    momentum_advection: VectorField
    coulomb: VectorField
    viscous: VectorField
    phi_u: float
    phi_psi: float

    def ion_total(self, i):
        return self.ion_advection[i] + self.ion_drift[i] + self.ion_diffusion[i]


def truncated_rhs(ions: IonState, fluid: FluidState, psi: ScalarField, bc: BoundaryRule,
                  R_u: float | None = None, R_psi: float | None = None) -> Tendencies:
    """Tendencies with the cut-off prefactors on the four nonlinear terms.

    ``Phi_{R_u}(|grad u|)`` multiplies ``(u.grad)u`` and ``(u.grad)c``;
    ``Phi_{R_psi}(|grad psi|_{W^{1,3.5}})`` multiplies the drift ``div(z c grad psi)``
    and the Coulomb force.  ``None`` radii switch the corresponding cut-off off.
    The drift prefactor blends the Scharfetter-Gummel flux with the pure
    diffusion flux, so the drift term is scaled exactly and stays monotone.
    """
    u = fluid.u
    phi_u = 1.0 if R_u is None else cutoff_phi(grad_norm_sq(u) ** 0.5, R_u)
    phi_psi = 1.0 if R_psi is None else cutoff_phi(grad_psi_w1p(psi), R_psi)
    zero_u = u.grid.zero_vector()
    adv, drift, diff = [], [], []
    for s in ions.species:
        full = ion_flux(s, u, psi, adv_factor=phi_u, drift_factor=phi_psi)
        with_drift = ion_flux(s, zero_u, psi, adv_factor=0.0, drift_factor=phi_psi)
        pure = ion_flux(s, zero_u, psi, adv_factor=0.0, drift_factor=0.0)
        diff.append(-divergence(pure).values)
        drift.append(-divergence(with_drift - pure).values)
        adv.append(-divergence(full - with_drift).values)
    rho = ions.charge_density()
    coul = coulomb_force(rho, psi, fluid.kappa, bc) * phi_psi
    coul = coul.interior()
    madv = advect(u) * (-phi_u)
    Lx, Ly = velocity_laplacians(u.grid)
    visc = u.grid.zero_vector()
    visc.ux[1:-1] = fluid.mu * (Lx @ u.ux[1:-1].ravel()).reshape(u.grid.nx - 1, u.grid.ny)
    visc.uy[:, 1:-1] = fluid.mu * (Ly @ u.uy[:, 1:-1].ravel()).reshape(u.grid.nx, u.grid.ny - 1)
    return Tendencies(adv, drift, diff, madv, coul, visc, phi_u, phi_psi)


# ---------------------------------------------------------------------------
# stopping-time monitors

MONITORED = ("u_h1", "c_h1", "grad_u_l2", "grad_psi_w13p", "u4_running")


def stopping_monitor(records, thresholds: dict) -> dict:
    """First record index at which each monitored functional exceeds its threshold.

    ``records`` is a sequence of diagnostics records (or mappings) carrying
    the attributes named in ``thresholds``; ``c_h1`` means the largest
    species H1 norm.  Missing hits map to ``None``.
    """
    hits = {name: None for name in thresholds}
    for n, rec in enumerate(records):
        for name, level in thresholds.items():
            if hits[name] is None and _monitored_value(rec, name) > level:
                hits[name] = n
    return hits


def _monitored_value(rec, name):
    v = rec[name] if isinstance(rec, dict) else getattr(rec, name)
    if np.ndim(v) > 0:
        v = max(v)
    return float(v)


def first_hit(values, level: float):
    idx = np.flatnonzero(np.asarray(values, float) > level)
    return int(idx[0]) if idx.size else None


def concentration_h1_bound(grid: Grid, mass: float) -> float:
    """A priori grid bound on ``|c|_H1`` for ``c >= 0`` with the given mass.

    ``|c|_L2^2 <= max(c) * mass <= mass^2 / cell_area`` and
    ``|grad_h c|^2 <= (4/hx^2 + 4/hy^2) |c|^2``.
    """
    lam_max = 4.0 / grid.hx**2 + 4.0 / grid.hy**2
    return math.sqrt(1.0 + lam_max) * mass / math.sqrt(grid.cell_area)


def paired_threshold(M: float, grid: Grid, masses) -> float:
    """Level for ``|grad u| + |grad psi|_W`` implied by ``|u|_H1 + max_i |c_i|_H1 > M``.

    Since ``|u|_H1 = |grad u|`` and each concentration norm is bounded by
    :func:`concentration_h1_bound`, the (u, c) norm exceeding ``M`` forces the
    gradient indicator above ``M - max_i bound_i`` at the same step.
    """
    b = max(concentration_h1_bound(grid, m) for m in masses)
    return max(M - b, 0.0)


def equivalence_constant(records) -> float:
    """Smallest ``K`` with ``max_i |c_i|_H1 <= K (1 + |grad psi|_W)`` on the records.

    Measured on a trajectory, it links the two blow-up indicators through
    :func:`measured_paired_threshold`.
    """
    return max(_monitored_value(r, "c_h1") / (1.0 + _monitored_value(r, "grad_psi_w13p")) for r in records)


def measured_paired_threshold(M: float, K: float) -> float:
    """Level for ``|grad u| + |grad psi|_W`` implied by ``|u|_H1 + max_i |c_i|_H1 > M``.

    From ``|c|_H1 <= K (1 + |grad psi|_W)`` the (u, c) norm is at most
    ``max(1, K) (|grad u| + |grad psi|_W) + K``.
    """
    return max((M - K) / max(1.0, K), 0.0)
