from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from npns.config import SimConfig, benchmark
from npns.diagnostics import (
    DiagnosticsRecord, NonUniformStepError, blowup_indicators, boundary_energy, charge_identity_residual,
    charge_identity_scale, dissipation, electric_energy, energy_balance_residual, free_energy, lj_norms,
    make_record, projected_hs_norm_sq, read_csv, write_csv,
)
from npns.fluid import FluidState, grad_norm_sq, project_divergence_free, vortex_mode
from npns.grid import BoundaryRule, Grid, ScalarField, VectorField
from npns.noise import NoiseModel, WienerIncrement, apply_noise_operator, hs_norm_sq
from npns.poisson import poisson_matrix, solve_poisson
from npns.simulation import run_simulation
from npns.state import SimState, electro_from_ions
from npns.transport import IonSpecies, IonState


def _state(g, c1, c2, u=None, eta=0.0, varsigma=1.0, mu=1.0, kappa=1.0, a=(1.0, 1.0)):
    ions = IonState([IonSpecies(1.0, a[0], c1), IonSpecies(-1.0, a[1], c2)])
    u = g.zero_vector() if u is None else u
    return SimState(ions, FluidState(u, g.zeros(), mu, kappa), electro_from_ions(ions, eta, varsigma))


def _random_state(seed, g=None):
    g = g or Grid(12, 10, 1.0, 0.8)
    rng = np.random.default_rng(seed)
    c1 = ScalarField(rng.uniform(0.1, 2, g.shape), g)
    c2 = ScalarField(rng.uniform(0.1, 2, g.shape), g)
    u = VectorField(rng.normal(size=(g.nx + 1, g.ny)), rng.normal(size=(g.nx, g.ny + 1)), g, no_slip=True)
    eta = rng.normal(size=g.n_boundary)
    return _state(g, c1, c2, u, eta, rng.uniform(0.2, 3), rng.uniform(0.5, 2), rng.uniform(0.5, 2),
                  tuple(rng.uniform(0.5, 2, 2)))


def test_rest_state_energy():
    g = Grid(16, 16)
    one = g.sample(lambda x, y: 1.0 + 0 * x)
    fe = free_energy(_state(g, one, one.copy()), delta=1e-300)
    assert fe.gibbs == 0.0 and fe.kinetic == 0.0 and fe.electric == 0.0 and fe.boundary == 0.0
    assert fe.total == 0.0


def test_kinetic_definition():
    g = Grid(8, 8)
    u = VectorField(np.zeros((9, 8)), np.zeros((8, 9)), g)
    u.ux[3, 4] = math.sqrt(2.0 / g.cell_area)
    zero = g.zeros()
    assert free_energy(_state(g, zero, zero.copy(), u)).kinetic == pytest.approx(1.0, rel=1e-14)


def _face_loop_energy(psi, eta, varsigma):
    # straightforward per-face quadrature of 1/2 |grad psi|^2 + varsigma/2 psi_b^2
    g = psi.grid
    v = psi.values
    e = 0.0
    for i in range(g.nx - 1):
        for j in range(g.ny):
            e += 0.5 * ((v[i + 1, j] - v[i, j]) / g.hx) ** 2 * g.hx * g.hy
    for i in range(g.nx):
        for j in range(g.ny - 1):
            e += 0.5 * ((v[i, j + 1] - v[i, j]) / g.hy) ** 2 * g.hx * g.hy
    wall, bnd = 0.0, 0.0
    k = 0
    for side, h, length in (("l", g.hx, g.hy), ("r", g.hx, g.hy), ("b", g.hy, g.hx), ("t", g.hy, g.hx)):
        n = g.ny if side in "lr" else g.nx
        for m in range(n):
            cell = {"l": (0, m), "r": (-1, m), "b": (m, 0), "t": (m, -1)}[side]
            cell = v[cell]
            # Robin face: (psi_f - cell) / (h/2) + varsigma psi_f = eta
            psi_f = (eta[k] * h / 2 + cell) / (1 + varsigma * h / 2)
            d = (psi_f - cell) / (h / 2)
            wall += 0.5 * d * d * (h / 2) * length
            bnd += 0.5 * varsigma * psi_f**2 * length
            k += 1
    return e + wall, bnd


@pytest.mark.parametrize("seed", range(5))
def test_free_energy_second_code_path(seed):
    s = _random_state(seed)
    fe = free_energy(s)
    g = s.grid
    el, bnd = _face_loop_energy(s.psi, s.electro.eta, s.electro.varsigma)
    assert fe.electric == pytest.approx(el, rel=1e-12)
    assert fe.boundary == pytest.approx(bnd, rel=1e-12)
    gib = sum(float(np.sum([c * math.log(c + 1e-12) for c in sp.c.values.ravel()])) * g.cell_area
              for sp in s.ions.species)
    assert fe.gibbs == pytest.approx(gib, rel=1e-12)
    ke = 0.5 * (np.sum(s.u.ux**2) + np.sum(s.u.uy**2)) * g.cell_area
    assert fe.kinetic == pytest.approx(ke, rel=1e-12)
    assert fe.total == pytest.approx(fe.kinetic + s.fluid.kappa * (gib + el + bnd), rel=1e-12)


def test_electric_energy_is_quadratic_form():
    # E_el + E_bnd - 1/2 psi^T A psi (cell-area weighted) depends on eta only
    g = Grid(10, 10)
    rng = np.random.default_rng(2)
    A = poisson_matrix(g, 1.0)
    for eta, const in ((rng.normal(size=g.n_boundary), None), (np.zeros(g.n_boundary), 0.0)):
        bc = BoundaryRule.robin(g, 1.0, eta)
        vals = []
        for _ in range(3):
            psi = ScalarField(rng.normal(size=g.shape), g)
            quad = 0.5 * psi.flat() @ (A @ psi.flat()) * g.cell_area
            vals.append(electric_energy(psi, bc) + boundary_energy(psi, bc) - quad)
        np.testing.assert_allclose(vals, vals[0] if const is None else const, rtol=1e-10, atol=1e-12)


def test_dissipation_at_boltzmann_equilibrium():
    g = Grid(24, 24)
    psi = g.sample(lambda x, y: np.sin(2 * x) * np.cos(3 * y))
    c1 = ScalarField(np.exp(-psi.values), g)
    c2 = ScalarField(np.exp(psi.values), g)
    s = _state(g, c1, c2)
    s.electro.psi = psi
    assert dissipation(s, delta=1e-300) <= 1e-10


def test_dissipation_of_shear_only():
    g = Grid(16, 16)
    ux = np.tile(np.sin(np.pi * g.yc), (g.nx + 1, 1))
    u = VectorField(ux, np.zeros((g.nx, g.ny + 1)), g, no_slip=True)
    one = g.sample(lambda x, y: 1.0 + 0 * x)
    s = _state(g, one, one.copy(), u, mu=0.3)
    assert dissipation(s) == 0.3 * grad_norm_sq(u)


@pytest.mark.parametrize("seed", range(5))
def test_dissipation_second_code_path(seed):
    s = _random_state(seed)
    g = s.grid
    psi = s.psi.values
    total = s.fluid.mu * grad_norm_sq(s.u)
    ion = 0.0
    for sp in s.ions.species:
        c = sp.c.values
        th = np.log(c + 1e-12) + sp.z * psi
        for i in range(g.nx):
            for j in range(g.ny):
                if i + 1 < g.nx:
                    ion += sp.a * 0.5 * (c[i, j] + c[i + 1, j]) * ((th[i + 1, j] - th[i, j]) / g.hx) ** 2
                if j + 1 < g.ny:
                    ion += sp.a * 0.5 * (c[i, j] + c[i, j + 1]) * ((th[i, j + 1] - th[i, j]) / g.hy) ** 2
    total += s.fluid.kappa * ion * g.cell_area
    assert dissipation(s) == pytest.approx(total, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_record_component_signs(seed):
    s = _random_state(seed % 1000)
    r = make_record(s)
    assert r.kinetic >= 0 and r.electric >= 0 and r.boundary_energy >= 0 and r.dissipation >= 0
    assert r.gibbs >= -2 / math.e * s.grid.area
    for per in r.lj_norms:
        assert all(b >= a * (1 - 1e-14) for a, b in zip(per, per[1:]))


def test_charge_identity():
    rng = np.random.default_rng(0)
    for _ in range(100):
        c1, c2 = rng.uniform(0, 5, (2, 16, 16))
        res = charge_identity_residual(c1, c2, 1.0, -1.0)
        assert res <= 1e-13 * charge_identity_scale(c1, c2, 1.0, -1.0)
    c = rng.uniform(0, 5, (8, 8))
    assert charge_identity_residual(c, c.copy(), 1.0, -1.0) == 0.0
    with pytest.raises(ValueError):
        charge_identity_residual(c, c, 1.0, 2.0)


def test_charge_identity_general_valences_expansion():
    rng = np.random.default_rng(1)
    c1, c2 = rng.uniform(0, 3, (2, 12, 12))
    # expanded monomials of rho (4 c1^2 - c2^2) and rho^2 (2 c1 + c2), rho = 2 c1 - c2
    lhs = 8 * c1**3 - 4 * c1**2 * c2 - 2 * c1 * c2**2 + c2**3
    rhs = 8 * c1**3 - 4 * c1**2 * c2 - 2 * c1 * c2**2 + c2**3
    oracle = float(np.max(np.abs(lhs - rhs)))
    res = charge_identity_residual(c1, c2, 2.0, -1.0)
    assert res == pytest.approx(oracle, abs=1e-13 * charge_identity_scale(c1, c2, 2.0, -1.0))


def test_indicators():
    g = Grid(16, 16)
    zero = g.zeros()
    ind = blowup_indicators(_state(g, zero, zero.copy()))
    assert ind.grad_u_l2 == ind.grad_psi_w13p == ind.u_h1 == ind.c_h1 == 0.0
    one = g.sample(lambda x, y: 1.0 + 0 * x)
    ind = blowup_indicators(_state(g, one, one.copy()))
    assert ind.grad_u_l2 == ind.grad_psi_w13p == 0.0 and ind.c_h1 == pytest.approx(1.0)
    s = _state(g, one, one.copy(), vortex_mode(g))
    s.electro.psi = g.sample(lambda x, y: x)
    a = blowup_indicators(s)
    assert a.grad_psi_w13p == pytest.approx(1.0, rel=1e-12)
    s.fluid.u = s.fluid.u * 2.0
    assert blowup_indicators(s).grad_u_l2 == pytest.approx(2 * a.grad_u_l2, rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_lj_norms(seed):
    g = Grid(10, 10)
    assert all(v == pytest.approx(1.0) for v in lj_norms(g.sample(lambda x, y: 1.0 + 0 * x)).values())
    assert all(v == pytest.approx(2.0) for v in lj_norms(g.sample(lambda x, y: 2.0 + 0 * x)).values())
    c = ScalarField(np.random.default_rng(seed).exponential(1.0, g.shape), g)
    vals = list(lj_norms(c).values())
    assert all(b >= a * (1 - 1e-14) for a, b in zip(vals, vals[1:]))


def test_lj_norms_reject_negative():
    g = Grid(8, 8)
    with pytest.raises(ValueError):
        lj_norms(g.sample(lambda x, y: x - 0.5))


def test_projected_hs_norm_bounded_by_unprojected():
    s = _random_state(3, Grid(12, 12))
    m = NoiseModel(s.grid)
    E = s.electro.field()
    p = projected_hs_norm_sq(m, s.u, E)
    assert 0 < p <= hs_norm_sq(m, s.u, E)
    # mode-by-mode with the scalar projection
    total = 0.0
    for k in range(m.K):
        dW = np.zeros(m.K)
        dW[k] = 1.0
        col = apply_noise_operator(m, s.u, E, WienerIncrement(dW, 1.0, 0, 0))
        pc, _ = project_divergence_free(col)
        total += pc.dot(pc)
    assert p == pytest.approx(total, rel=1e-9)


def _records(n, dt=0.1, **kw):
    return [DiagnosticsRecord(t=k * dt, kinetic=1.0, gibbs=0.0, electric=0.0, boundary_energy=0.0,
                              dissipation=0.0, ito_half_hs=0.0, masses=[1.0], min_c=[1.0],
                              lj_norms=[[1.0] * 4], grad_u_l2=0.0, grad_psi_w13p=0.0, u_h1=0.0,
                              c_h1=[1.0], u4_running=0.0, **kw) for k in range(n)]


def test_energy_balance_bookkeeping():
    recs = _records(5)
    assert energy_balance_residual(recs) == 0.0
    recs[-1].kinetic = 2.0
    assert energy_balance_residual(recs, [0.25] * 4) == pytest.approx(0.0)
    recs[0].dissipation = 3.0
    assert energy_balance_residual(recs, [0.25] * 4) == pytest.approx(0.3)
    # a finite realised viscous loss replaces the viscous part
    for r in recs:
        r.viscous_loss = 0.0
    recs[0].viscous_dissipation = 3.0
    assert energy_balance_residual(recs, [0.25] * 4) == pytest.approx(0.0)
    bad = _records(4)
    bad[2].t = 0.25
    with pytest.raises(NonUniformStepError):
        energy_balance_residual(bad)
    with pytest.raises(ValueError):
        energy_balance_residual(recs, [0.0])


def test_csv_roundtrip(tmp_path):
    s = _random_state(4)
    r = make_record(s, noise=NoiseModel(s.grid), u4_running=0.5, noise_work=1e-3)
    r.viscous_loss = 0.125
    write_csv(tmp_path / "d.csv", [r, r], 2)
    back = read_csv(tmp_path / "d.csv", kappa=s.fluid.kappa)
    assert back[0].row() == r.row()
    assert back[0].free_energy == r.free_energy
    header = (tmp_path / "d.csv").read_text().splitlines()[0].split(",")
    assert header == DiagnosticsRecord.columns(2)
    assert header[:8] == ["t", "kinetic", "gibbs", "electric", "boundary_energy", "dissipation",
                          "ito_half_hs", "masses_1"]


def test_neumann_state_energy_finite():
    g = Grid(12, 12)
    c1 = g.sample(lambda x, y: 1 + 0.5 * np.cos(np.pi * x))
    c2 = g.sample(lambda x, y: 1 + 0.5 * np.cos(np.pi * y))
    s = _state(g, c1, c2, varsigma=0.0)
    fe = free_energy(s)
    assert fe.boundary == 0.0 and fe.electric > 0
    psi = solve_poisson(s.ions.charge_density(), 0.0, 0.0)
    np.testing.assert_allclose(s.psi.values, psi.values)


def test_deterministic_residual_halves_under_refinement():
    res = []
    for n, dt in ((16, 4e-4), (23, 2e-4), (32, 1e-4)):
        cfg = benchmark("default", **{"grid.nx": n, "grid.ny": n, "time.dt": dt, "time.T": 0.02})
        res.append(energy_balance_residual(run_simulation(cfg).records))
    assert res[0] > 0
    for a, b in zip(res, res[1:]):
        assert 1.8 <= a / b <= 2.2


def test_zero_data_residual_is_exactly_zero():
    zero = {"z": 1.0, "a": 1.0, "initial": {"kind": "uniform", "value": 0.0}}
    cfg = benchmark("default", **{"time.dt": 0.01, "time.T": 0.1, "grid.nx": 8, "grid.ny": 8})
    data = cfg.to_dict()
    data["physics"]["species"] = [zero, {**zero, "z": -1.0}]
    r = run_simulation(SimConfig(data))
    assert r.ok and len(r.records) == 11
    assert energy_balance_residual(r.records) == 0.0
