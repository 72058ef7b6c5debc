from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from npns.grid import Grid, ScalarField, VectorField
from npns.transport import (
    IonSpecies, IonState, StepRejected, bernoulli, chi_field, dt_max, entropy, ion_flux,
    step_ions, total_mass,
)


def _random_state(g, rng, m=2):
    sp = [IonSpecies(z, rng.uniform(0.5, 2.0), ScalarField(rng.uniform(0, 2, g.shape), g))
          for z in (1.0, -1.0, 2.0)[:m]]
    return IonState(sp)


def _random_velocity(g, rng, scale=1.0):
    return VectorField(scale * rng.normal(size=(g.nx + 1, g.ny)),
                       scale * rng.normal(size=(g.nx, g.ny + 1)), g, no_slip=True)


def test_bernoulli_limits():
    x = np.array([-1e-8, 0.0, 1e-8, 1.0, -30.0, 30.0])
    B = bernoulli(x)
    np.testing.assert_allclose(B[:3], 1.0, atol=1e-7)
    assert B[3] == pytest.approx(1 / math.expm1(1.0))
    np.testing.assert_allclose(bernoulli(-x) - bernoulli(x), x, atol=1e-12)


def test_zero_flux_without_gradients():
    g = Grid(10, 10)
    s = IonSpecies(1.0, 1.0, g.sample(lambda x, y: 2.0 + 0 * x))
    f = ion_flux(s, g.zero_vector(), g.sample(lambda x, y: 0.3 + 0 * x))
    assert np.all(f.ux == 0) and np.all(f.uy == 0)


@pytest.mark.parametrize("z", [1.0, -1.0, 2.0])
def test_boltzmann_profile_has_zero_flux(z):
    g = Grid(32, 32)
    psi = g.sample(lambda x, y: 2.0 * np.sin(3 * x) * np.cos(2 * y) + x * y)
    c = ScalarField(np.exp(-z * psi.values), g)
    f = ion_flux(IonSpecies(z, 1.3, c), g.zero_vector(), psi)
    assert max(np.abs(f.ux).max(), np.abs(f.uy).max()) <= 1e-10


def test_upwind_advection_takes_left_cell():
    g = Grid(8, 4)
    c = g.sample(lambda x, y: np.where(x < 0.5, 2.0, 0.5))
    psi = g.zeros()
    u = VectorField(np.ones((9, 4)), np.zeros((8, 5)), g, no_slip=True)
    sp = IonSpecies(1.0, 1.0, c)
    adv = ion_flux(sp, u, psi).ux - ion_flux(sp, g.zero_vector(), psi).ux
    np.testing.assert_allclose(adv[1:-1], c.values[:-1], atol=1e-14)
    assert np.all(adv[[0, -1]] == 0)


def test_wall_fluxes_vanish_and_nonfinite_rejected():
    g = Grid(8, 8)
    rng = np.random.default_rng(0)
    st_ = _random_state(g, rng)
    f = ion_flux(st_.species[0], _random_velocity(g, rng), ScalarField(rng.normal(size=g.shape), g))
    assert np.all(f.outward_boundary() == 0)
    bad = g.sample(lambda x, y: np.where(x < 0.5, np.nan, 1.0))
    with pytest.raises(ValueError):
        ion_flux(IonSpecies(1.0, 1.0, bad), g.zero_vector(), g.zeros())


def test_uniform_state_unchanged():
    g = Grid(8, 8)
    st_ = IonState([IonSpecies(1.0, 1.0, g.sample(lambda x, y: 1.5 + 0 * x))])
    new = step_ions(st_, g.zero_vector(), g.sample(lambda x, y: 0.7 + 0 * x), 123.0)
    assert np.array_equal(new.species[0].c.values, st_.species[0].c.values)


def test_mass_conserved_over_1000_steps():
    g = Grid(32, 32)
    rng = np.random.default_rng(1)
    st_ = _random_state(g, rng)
    u = _random_velocity(g, rng, 0.5)
    psi = g.sample(lambda x, y: np.cos(np.pi * x) * np.sin(2 * y))
    m0 = st_.masses()
    dt = dt_max(st_, u, psi)
    for _ in range(1000):
        st_ = step_ions(st_, u, psi, dt)
    for a, b in zip(m0, st_.masses()):
        assert abs(b - a) / a <= 1e-12


def test_oversized_step_rejected():
    g = Grid(16, 16)
    rng = np.random.default_rng(2)
    st_ = _random_state(g, rng)
    psi = g.sample(lambda x, y: 3 * x)
    bound = dt_max(st_, g.zero_vector(), psi)
    with pytest.raises(StepRejected) as info:
        step_ions(st_, g.zero_vector(), psi, 10 * bound)
    assert info.value.dt_max == pytest.approx(bound)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_positivity_below_bound(seed, frac, adv, drift):
    g = Grid(12, 10)
    rng = np.random.default_rng(seed)
    st_ = _random_state(g, rng, 3)
    st_.species[0].c.values[rng.random(g.shape) < 0.3] = 0.0
    u = _random_velocity(g, rng, 3.0)
    psi = ScalarField(5 * rng.normal(size=g.shape), g)
    dt = frac * dt_max(st_, u, psi, adv_factor=adv, drift_factor=drift)
    m0 = st_.masses()
    for _ in range(5):
        st_ = step_ions(st_, u, psi, dt, adv_factor=adv, drift_factor=drift)
        assert min(s.c.values.min() for s in st_.species) >= 0.0
    np.testing.assert_allclose(st_.masses(), m0, rtol=1e-12)


def test_drift_factor_scales_drift_exactly():
    g = Grid(12, 12)
    rng = np.random.default_rng(3)
    sp = _random_state(g, rng).species[0]
    psi = ScalarField(rng.normal(size=g.shape), g)
    zero = g.zero_vector()
    pure = ion_flux(sp, zero, psi, drift_factor=0.0)
    full = ion_flux(sp, zero, psi)
    half = ion_flux(sp, zero, psi, drift_factor=0.5)
    np.testing.assert_allclose(half.ux, pure.ux + 0.5 * (full.ux - pure.ux), atol=1e-12)
    np.testing.assert_allclose(half.uy, pure.uy + 0.5 * (full.uy - pure.uy), atol=1e-12)


def test_total_mass_oracles():
    g = Grid(16, 16)
    assert total_mass(g.sample(lambda x, y: 1.0 + 0 * x)) == pytest.approx(1.0, rel=1e-14)
    assert total_mass(g.zeros()) == 0.0
    g = Grid(128, 128)
    w = 0.1
    c = g.sample(lambda x, y: np.exp(-((x - 0.5) ** 2 + (y - 0.5) ** 2) / (2 * w * w)))
    exact = 2 * np.pi * w * w * math.erf(0.5 / (math.sqrt(2) * w)) ** 2
    assert total_mass(c) == pytest.approx(exact, rel=1e-6)


def test_entropy_oracles():
    g = Grid(16, 16)
    assert entropy(g.sample(lambda x, y: 1.0 + 0 * x), 1e-15) == pytest.approx(0.0, abs=1e-13)
    assert entropy(g.zeros(), 1e-3) == 0.0
    assert entropy(g.sample(lambda x, y: math.e + 0 * x), 1e-12) == pytest.approx(math.e, abs=1e-9)
    with pytest.raises(ValueError):
        entropy(g.sample(lambda x, y: x - 0.5), 1e-12)


def test_chi_field():
    g = Grid(8, 8)
    a, b = g.sample(lambda x, y: x), g.sample(lambda x, y: y)
    st_ = IonState([IonSpecies(2.0, 1.0, a), IonSpecies(-2.0, 1.0, b)])
    np.testing.assert_allclose(chi_field(st_).values, 2 * (a.values + b.values))
    with pytest.raises(ValueError):
        chi_field(IonState([IonSpecies(2.0, 1.0, a), IonSpecies(-1.0, 1.0, b)]))


def test_invalid_species():
    g = Grid(8, 8)
    with pytest.raises(ValueError):
        IonSpecies(1.0, 0.0, g.zeros())
    with pytest.raises(ValueError):
        IonState([])
    with pytest.raises(ValueError):
        IonState([IonSpecies(1.0, 1.0, g.zeros())], entropy_delta=0.0)
