"""Per-step functionals: free energy, dissipation, Ito correction, norms, CSV output.

Discrete conventions
--------------------
* electric energy is ``1/2`` the face-gradient energy: interior faces weigh a
  full cell, wall faces the half cell between the wall and the cell centre,
  with the wall gradient taken from the Robin closure.  Together with the
  boundary term this equals ``1/2 psi^T A psi`` up to an ``eta``-only
  constant, ``A`` being the Poisson matrix, so its time derivative is
  exactly ``<psi, d rho / dt>``.
* concentrations are interpolated to faces by the arithmetic mean;
  wall faces carry no ionic dissipation (blocking walls).
* the Ito correction is ``1/2 |P f|_HS^2``: only the solenoidal part of the
  noise reaches the velocity.
* ``viscous_loss`` is the kinetic energy the implicit viscous solve of the
  step starting at the record actually removes, per unit time.  It equals
  ``mu |grad u|^2`` to ``O(dt)`` for smooth fields but stays exact for the
  rough fields a noise increment creates, so the energy balance uses it in
  place of the viscous dissipation when available.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields

import numpy as np

from .fluid import grad_norm_sq, kinetic_energy, project_many
from .grid import BoundaryRule, ScalarField, VectorField
from .noise import NoiseModel, noise_columns
from .regularization import grad_psi_w1p
from .transport import entropy

LJ_EXPONENTS = (1, 2, 4, 8)


@dataclass
class FreeEnergy:
    kinetic: float
    gibbs: float
    electric: float
    boundary: float
    kappa: float = 1.0

    @property
    def total(self) -> float:
        return self.kinetic + self.kappa * (self.gibbs + self.electric + self.boundary)


def electric_energy(psi: ScalarField, bc: BoundaryRule) -> float:
    g = psi.grid
    v = psi.values
    inner = (np.sum(np.diff(v, axis=0) ** 2) / g.hx**2 + np.sum(np.diff(v, axis=1) ** 2) / g.hy**2)
    d = bc.normal_derivative(psi)
    wall = np.sum(d**2 * 0.5 * g.boundary_normal_spacing() * g.boundary_lengths())
    return 0.5 * (inner * g.cell_area + wall)


def boundary_energy(psi: ScalarField, bc: BoundaryRule) -> float:
    g = psi.grid
    if bc.varsigma == 0.0:
        return 0.0
    return 0.5 * bc.varsigma * float(np.sum(bc.face_values(psi) ** 2 * g.boundary_lengths()))


def free_energy(state, varsigma: float | None = None, delta: float | None = None) -> FreeEnergy:
    """Kinetic, Gibbs, electric and boundary parts of the total free energy.

    The total is ``kinetic + kappa (gibbs + electric + boundary)``, the
    combination whose rate is minus the dissipation for any coupling ``kappa``.
    """
    el = state.electro
    varsigma = el.varsigma if varsigma is None else varsigma
    delta = state.ions.entropy_delta if delta is None else delta
    bc = BoundaryRule.robin(el.psi.grid, varsigma, el.eta)
    gibbs = sum(entropy(s.c, delta) for s in state.ions.species)
    return FreeEnergy(kinetic_energy(state.fluid.u), gibbs, electric_energy(el.psi, bc),
                      boundary_energy(el.psi, bc), state.fluid.kappa)


def electrochemical_potential(c: ScalarField, z: float, psi: ScalarField, delta: float) -> np.ndarray:
    return np.log(c.values + delta) + z * psi.values


def ion_dissipation(state, delta: float | None = None) -> float:
    """``sum_i a_i |sqrt(c_i) grad theta_i|^2`` over interior faces."""
    delta = state.ions.entropy_delta if delta is None else delta
    psi = state.electro.psi
    g = psi.grid
    total = 0.0
    for s in state.ions.species:
        c = s.c.values
        if c.min() < 0:
            raise ValueError("dissipation of a negative concentration")
        th = electrochemical_potential(s.c, s.z, psi, delta)
        cx = 0.5 * (c[:-1] + c[1:])
        cy = 0.5 * (c[:, :-1] + c[:, 1:])
        tx = np.diff(th, axis=0) / g.hx
        ty = np.diff(th, axis=1) / g.hy
        total += s.a * (np.sum(cx * tx**2) + np.sum(cy * ty**2)) * g.cell_area
    return float(total)


def dissipation(state, delta: float | None = None) -> float:
    """``mu |grad u|^2 + kappa sum_i a_i |sqrt(c_i) grad theta_i|^2``."""
    fl = state.fluid
    return fl.mu * grad_norm_sq(fl.u) + fl.kappa * ion_dissipation(state, delta)


def projected_hs_norm_sq(model: NoiseModel, u: VectorField, E: VectorField) -> float:
    """``sum_k |P f(u, E) e_k|^2`` with ``P`` the discrete Leray projection."""
    cx, cy = noise_columns(model, u, E)
    px, py = project_many(cx, cy, model.grid)
    return float((np.sum(px**2) + np.sum(py**2)) * model.grid.cell_area)


# ---------------------------------------------------------------------------
# norms


def lj_norms(c: ScalarField, js=LJ_EXPONENTS) -> dict:
    v = c.values
    if v.min() < 0:
        raise ValueError("L^j norms are taken of non-negative concentrations")
    a = c.grid.cell_area
    return {j: float(np.sum(v**j) * a) ** (1.0 / j) for j in js}


def scalar_h1_norm(c: ScalarField) -> float:
    g = c.grid
    v = c.values
    semi = (np.sum(np.diff(v, axis=0) ** 2) / g.hx**2 + np.sum(np.diff(v, axis=1) ** 2) / g.hy**2)
    return math.sqrt((np.sum(v**2) + semi) * g.cell_area)


@dataclass
class BlowupIndicators:
    grad_u_l2: float
    grad_psi_w13p: float
    u_h1: float
    c_h1: float


def blowup_indicators(state) -> BlowupIndicators:
    """``|grad u|``, ``|grad psi|_{W^{1,3.5}}``, ``|u|_H1`` and ``max_i |c_i|_H1``.

    The velocity space norm is the gradient norm (Poincare), so the first and
    third entries coincide.
    """
    gu = math.sqrt(max(grad_norm_sq(state.fluid.u), 0.0))
    return BlowupIndicators(gu, grad_psi_w1p(state.electro.psi), gu,
                            max(scalar_h1_norm(s.c) for s in state.ions.species))


def charge_identity_residual(c1, c2, z1: float, z2: float) -> float:
    """Max cell residual of ``rho (z1^2 c1^2 - z2^2 c2^2) = rho^2 (|z1| c1 + |z2| c2)``.

    With ``z1 > 0 > z2`` the left side factors as
    ``rho (z1 c1 - |z2| c2)(z1 c1 + |z2| c2)`` and ``z1 c1 - |z2| c2 = rho``,
    so the identity is exact for any opposite valences.
    """
    if not (z1 > 0 > z2):
        raise ValueError("the identity needs valences of opposite sign, z1 > 0 > z2")
    c1 = np.asarray(getattr(c1, "values", c1), float)
    c2 = np.asarray(getattr(c2, "values", c2), float)
    rho = z1 * c1 + z2 * c2
    lhs = rho * (z1**2 * c1**2 - z2**2 * c2**2)
    rhs = rho**2 * (abs(z1) * c1 + abs(z2) * c2)
    return float(np.max(np.abs(lhs - rhs)))


def charge_identity_scale(c1, c2, z1: float, z2: float) -> float:
    """Natural magnitude of either side, ``max (|z1| c1 + |z2| c2)^3``."""
    c1 = np.asarray(getattr(c1, "values", c1), float)
    c2 = np.asarray(getattr(c2, "values", c2), float)
    return float(np.max((abs(z1) * c1 + abs(z2) * c2) ** 3))


# ---------------------------------------------------------------------------
# per-step record


@dataclass
class DiagnosticsRecord:
    t: float
    kinetic: float
    gibbs: float
    electric: float
    boundary_energy: float
    dissipation: float
    ito_half_hs: float
    masses: list
    min_c: list
    lj_norms: list          # per species, values for LJ_EXPONENTS
    grad_u_l2: float
    grad_psi_w13p: float
    u_h1: float
    c_h1: list
    u4_running: float
    noise_work: float = 0.0
    viscous_dissipation: float = 0.0
    viscous_loss: float = math.nan

    kappa: float = 1.0      # weight of the ionic energy; not written to CSV

    @property
    def free_energy(self) -> float:
        return self.kinetic + self.kappa * (self.gibbs + self.electric + self.boundary_energy)

    @property
    def c_h1_max(self) -> float:
        return max(self.c_h1)

    # -- CSV layout ------------------------------------------------------

    @staticmethod
    def columns(m: int) -> list[str]:
        cols = []
        for f in fields(DiagnosticsRecord):
            if f.name == "kappa":
                continue
            if f.name in ("masses", "min_c", "c_h1"):
                cols += [f"{f.name}_{i + 1}" for i in range(m)]
            elif f.name == "lj_norms":
                cols += [f"l{j}_{i + 1}" for i in range(m) for j in LJ_EXPONENTS]
            else:
                cols.append(f.name)
        return cols

    def row(self) -> list[float]:
        out = []
        for f in fields(self):
            if f.name == "kappa":
                continue
            v = getattr(self, f.name)
            if f.name == "lj_norms":
                out += [x for per in v for x in per]
            elif isinstance(v, (list, tuple)):
                out += list(v)
            else:
                out.append(v)
        return [float(x) for x in out]

    @classmethod
    def from_row(cls, row: dict, m: int, kappa: float = 1.0) -> DiagnosticsRecord:
        per = lambda name: [float(row[f"{name}_{i + 1}"]) for i in range(m)]  # noqa: E731
        return cls(
            t=float(row["t"]), kinetic=float(row["kinetic"]), gibbs=float(row["gibbs"]),
            electric=float(row["electric"]), boundary_energy=float(row["boundary_energy"]),
            dissipation=float(row["dissipation"]), ito_half_hs=float(row["ito_half_hs"]),
            masses=per("masses"), min_c=per("min_c"),
            lj_norms=[[float(row[f"l{j}_{i + 1}"]) for j in LJ_EXPONENTS] for i in range(m)],
            grad_u_l2=float(row["grad_u_l2"]), grad_psi_w13p=float(row["grad_psi_w13p"]),
            u_h1=float(row["u_h1"]), c_h1=per("c_h1"), u4_running=float(row["u4_running"]),
            noise_work=float(row["noise_work"]),
            viscous_dissipation=float(row["viscous_dissipation"]),
            viscous_loss=float(row["viscous_loss"]), kappa=kappa,
        )


def make_record(state, *, noise: NoiseModel | None = None, E: VectorField | None = None,
                u4_running: float = 0.0, noise_work: float = 0.0) -> DiagnosticsRecord:
    """Evaluate every functional on ``state``.

    ``E`` is the face field fed to the noise operator; it is recomputed from
    the potential gradient when omitted.  ``viscous_loss`` is left as ``nan``
    for the stepper to fill in.
    """
    ions, fl, el = state.ions, state.fluid, state.electro
    fe = free_energy(state)
    ind = blowup_indicators(state)
    ito = 0.0
    if noise is not None:
        if E is None:
            E = -el.field()
        ito = 0.5 * projected_hs_norm_sq(noise, fl.u, E)
    sp = ions.species
    return DiagnosticsRecord(
        t=state.t, kinetic=fe.kinetic, gibbs=fe.gibbs, electric=fe.electric,
        boundary_energy=fe.boundary, dissipation=dissipation(state), ito_half_hs=ito,
        masses=ions.masses(), min_c=[float(s.c.values.min()) for s in sp],
        lj_norms=[list(lj_norms(s.c).values()) for s in sp],
        grad_u_l2=ind.grad_u_l2, grad_psi_w13p=ind.grad_psi_w13p, u_h1=ind.u_h1,
        c_h1=[scalar_h1_norm(s.c) for s in sp], u4_running=u4_running,
        noise_work=noise_work, viscous_dissipation=fl.mu * grad_norm_sq(fl.u), kappa=fl.kappa,
    )


class NonUniformStepError(ValueError):
    """Energy-balance sums need a uniform time step."""


def energy_balance_residual(traj, noise_work=None, rtol: float = 1e-9) -> float:
    """``E(T) - E(0) + sum D_n dt - sum W_n - sum I_n dt`` with left-point sums.

    ``traj`` holds the records at ``t_0 .. t_N``; ``noise_work[n]`` is the
    work of the increment applied over ``[t_n, t_{n+1}]`` (taken from the
    records when omitted), so only the first ``N`` entries enter.  When every
    one of those records carries a finite ``viscous_loss`` it replaces the
    viscous part of ``D_n``.
    """
    traj = list(traj)
    if len(traj) < 2:
        return 0.0
    t = np.array([r.t for r in traj])
    steps = np.diff(t)
    dt = steps.mean()
    if np.any(np.abs(steps - dt) > rtol * max(abs(dt), 1e-300) + 1e-14 * abs(t[-1])):
        raise NonUniformStepError("energy balance requires a uniform dt")
    n = len(traj) - 1
    work = np.array([r.noise_work for r in traj[:n]] if noise_work is None else list(noise_work)[:n])
    if work.size != n:
        raise ValueError("need one noise-work entry per step")
    head = traj[:n]
    if all(math.isfinite(r.viscous_loss) for r in head):
        D = sum(r.dissipation - r.viscous_dissipation + r.viscous_loss for r in head)
    else:
        D = sum(r.dissipation for r in head)
    I = sum(r.ito_half_hs for r in head)
    return float(traj[-1].free_energy - traj[0].free_energy + dt * D - work.sum() - dt * I)


# ---------------------------------------------------------------------------
# CSV


def write_csv(path, records, m: int | None = None) -> None:
    records = list(records)
    if m is None:
        m = len(records[0].masses) if records else 1
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DiagnosticsRecord.columns(m))
        for r in records:
            w.writerow([repr(x) for x in r.row()])


def read_csv(path, kappa: float = 1.0) -> list[DiagnosticsRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return []
    m = sum(1 for k in rows[0] if k.startswith("masses_"))
    return [DiagnosticsRecord.from_row(r, m, kappa) for r in rows]
