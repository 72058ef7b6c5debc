"""Nernst-Planck transport in conservative flux form with blocking walls.

Face fluxes combine first-order upwind advection with Scharfetter-Gummel
(exponential fitting) for the drift-diffusion part ``-a (grad c + z c grad psi)``.
Wall fluxes are identically zero, so the cell sum of ``c`` telescopes and is
conserved by every explicit Euler step.  Positivity holds whenever
``dt <= dt_max``, which is computed from the actual outflow coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .grid import ScalarField, VectorField, check_same_grid, divergence


class StepRejected(ValueError):
    """The requested step exceeds the positivity bound."""

    def __init__(self, dt: float, dt_max: float):
        self.dt = dt
        self.dt_max = dt_max
        super().__init__(f"dt = {dt:.4g} exceeds positivity bound dt_max = {dt_max:.4g}")


class InvariantViolation(RuntimeError):
    """A conservation or sign invariant failed where it cannot fail."""


@dataclass(eq=False)
class IonSpecies:
    z: float
    a: float
    c: ScalarField

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"diffusivity must be positive, got {self.a}")


@dataclass(eq=False)
class IonState:
    species: list[IonSpecies]
    entropy_delta: float = 1e-12

    def __post_init__(self):
        if len(self.species) < 1:
            raise ValueError("at least one species is required")
        if not self.entropy_delta > 0:
            raise ValueError("entropy_delta must be positive")
        check_same_grid(*(s.c for s in self.species))

    @property
    def grid(self):
        return self.species[0].c.grid

    def charge_density(self) -> ScalarField:
        rho = sum(s.z * s.c.values for s in self.species)
        return ScalarField(rho, self.grid)

    def masses(self) -> list[float]:
        return [total_mass(s.c) for s in self.species]


def bernoulli(x):
    """``B(x) = x / (exp(x) - 1)`` with ``B(0) = 1``."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-6
    xs = np.where(small, 1.0, x)
    return np.where(small, 1.0 - 0.5 * x + x * x / 12.0, xs / np.expm1(xs))


def _face_parts(sp_: IonSpecies, u: VectorField, psi: ScalarField, adv_factor, drift_factor):
    """Per-face outflow coefficients ``(out_left, out_right)`` for x and y faces.

    For an interior face between cells L and R the flux (L to R, per unit
    length) is ``out_left * c_L - out_right * c_R``.
    """
    g = sp_.c.grid
    a, z = sp_.a, sp_.z
    dpx = z * np.diff(psi.values, axis=0)
    dpy = z * np.diff(psi.values, axis=1)
    ux = adv_factor * u.ux[1:-1, :]
    uy = adv_factor * u.uy[:, 1:-1]
    # drift_factor blends the SG weights with the pure-diffusion weight 1,
    # which scales the drift part of the flux exactly and keeps it monotone;
    # B(-d) = B(d) + d gives the downwind weight without a second exponential
    bx, by = bernoulli(dpx), bernoulli(dpy)
    if drift_factor != 1.0:
        w = 1.0 - drift_factor
        fx, fy = drift_factor * bx + w, drift_factor * by + w
        bx_, by_ = drift_factor * (bx + dpx) + w, drift_factor * (by + dpy) + w
    else:
        fx, fy, bx_, by_ = bx, by, bx + dpx, by + dpy
    lx = a / g.hx * fx + np.maximum(ux, 0.0)
    rx = a / g.hx * bx_ + np.maximum(-ux, 0.0)
    ly = a / g.hy * fy + np.maximum(uy, 0.0)
    ry = a / g.hy * by_ + np.maximum(-uy, 0.0)
    return lx, rx, ly, ry


def ion_flux(sp_: IonSpecies, u: VectorField, psi: ScalarField, *,
             adv_factor: float = 1.0, drift_factor: float = 1.0) -> VectorField:
    """Face flux ``b = u c - a grad c - a z c grad psi``; zero on every wall face.

    ``adv_factor`` scales the advective velocity and ``drift_factor`` the
    drift part ``-a z c grad psi`` (the cut-off prefactors of the truncated
    system); both must lie in ``[0, 1]`` for the positivity bound to hold.
    """
    check_same_grid(sp_.c, u, psi)
    c = sp_.c.values
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(psi.values))
            and np.all(np.isfinite(u.ux)) and np.all(np.isfinite(u.uy))):
        raise ValueError("non-finite input to ion_flux")
    g = sp_.c.grid
    lx, rx, ly, ry = _face_parts(sp_, u, psi, adv_factor, drift_factor)
    fx = np.zeros((g.nx + 1, g.ny))
    fy = np.zeros((g.nx, g.ny + 1))
    fx[1:-1] = lx * c[:-1] - rx * c[1:]
    fy[:, 1:-1] = ly * c[:, :-1] - ry * c[:, 1:]
    return VectorField(fx, fy, g)


def dt_max(state: IonState, u: VectorField, psi: ScalarField, *, safety: float = 0.9,
           adv_factor: float = 1.0, drift_factor: float = 1.0) -> float:
    """Largest explicit step keeping every species non-negative, times ``safety``.

    A cell stays non-negative when ``dt`` times its total outflow rate is at
    most one; the rate sums advective, diffusive and drift contributions of
    all its faces.
    """
    parts = [_face_parts(s, u, psi, adv_factor, drift_factor) for s in state.species]
    return _bound(state.grid, parts, safety)


def _bound(g, parts, safety):
    worst = 0.0
    for lx, rx, ly, ry in parts:
        rate = np.zeros(g.shape)
        rate[:-1] += lx / g.hx
        rate[1:] += rx / g.hx
        rate[:, :-1] += ly / g.hy
        rate[:, 1:] += ry / g.hy
        worst = max(worst, float(rate.max()))
    return np.inf if worst == 0.0 else safety / worst


def step_ions(state: IonState, u: VectorField, psi: ScalarField, dt: float, *,
              adv_factor: float = 1.0, drift_factor: float = 1.0,
              check: bool = True) -> IonState:
    """One explicit Euler step ``c <- c - dt div b`` for every species.

    A state with zero flux divergence (a discrete equilibrium) is returned
    unchanged for any ``dt``; otherwise ``dt`` must not exceed the bound.

    Raises
    ------
    StepRejected
        ``dt`` is above :func:`dt_max` and the step would change the state.
    InvariantViolation
        A concentration went negative (impossible below ``dt_max``).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    g = state.grid
    parts = [_face_parts(s, u, psi, adv_factor, drift_factor) for s in state.species]
    divs = []
    for s, (lx, rx, ly, ry) in zip(state.species, parts):
        c0 = s.c.values
        fx = lx * c0[:-1] - rx * c0[1:]
        fy = ly * c0[:, :-1] - ry * c0[:, 1:]
        div = np.zeros(g.shape)
        div[:-1] += fx / g.hx
        div[1:] -= fx / g.hx
        div[:, :-1] += fy / g.hy
        div[:, 1:] -= fy / g.hy
        divs.append(div)
    if check:
        bound = _bound(g, parts, 0.9)
        if dt > bound and any(np.any(d != 0.0) for d in divs):
            raise StepRejected(dt, bound)
    new = []
    for s, div in zip(state.species, divs):
        c = s.c.values - dt * div
        if c.min() < 0.0:
            raise InvariantViolation(f"negative concentration {c.min():.3e} for species z={s.z}")
        new.append(IonSpecies(s.z, s.a, ScalarField(c, g)))
    return replace(state, species=new)


def total_mass(c: ScalarField) -> float:
    return float(c.values.sum() * c.grid.cell_area)


def entropy(c: ScalarField, delta: float) -> float:
    """Regularised Gibbs term ``sum c log(c + delta)`` times the cell area."""
    v = c.values
    if v.min() < 0:
        raise ValueError("entropy of a negative concentration")
    if not delta > 0:
        raise ValueError("delta must be positive")
    return float(np.sum(v * np.log(v + delta)) * c.grid.cell_area)


def chi_field(state: IonState) -> ScalarField:
    """``chi = z (c^1 + ... + c^m)`` for species sharing one valence magnitude.

    Together with ``rho`` it obeys a closed transport pair when all
    diffusivities agree; no structure is claimed for unequal ``a_i``.
    """
    mags = {abs(s.z) for s in state.species}
    if len(mags) != 1:
        raise ValueError("chi is defined only for equal valence magnitudes")
    zm = mags.pop()
    return ScalarField(zm * sum(s.c.values for s in state.species), state.grid)
