from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from npns.grid import Grid, VectorField
from npns.noise import (
    NoiseModel, RngStream, WienerIncrement, _cos_factor, apply_noise_operator, em_linear,
    em_weak_errors, hs_norm_sq, noise_columns, sample_wiener_increment, verify_assumptions,
)


def _field(g, rng, no_slip=True):
    return VectorField(rng.normal(size=(g.nx + 1, g.ny)), rng.normal(size=(g.nx, g.ny + 1)), g,
                       no_slip=no_slip)


def test_increments_reproducible_and_independent_of_order():
    m = NoiseModel(Grid(8, 8))
    rng = RngStream(42, 3)
    a = sample_wiener_increment(m, 0.01, rng, 17).dW
    sample_wiener_increment(m, 0.01, rng, 5)
    b = sample_wiener_increment(m, 0.01, RngStream(42, 3), 17).dW
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sample_wiener_increment(m, 0.01, RngStream(42, 4), 17).dW)
    assert not np.array_equal(a, sample_wiener_increment(m, 0.01, rng, 18).dW)


def test_zero_dt_gives_zero_increment():
    m = NoiseModel(Grid(8, 8))
    assert np.all(sample_wiener_increment(m, 0.0, RngStream(0), 0).dW == 0)


def test_increment_moments():
    dt, N = 0.01, 100_000
    z = np.array([RngStream(7, 0).normal(n, 1)[0] for n in range(2000)])
    assert z.std() == pytest.approx(1.0, rel=0.1)
    # one long stream of draws: rows are steps
    dW = np.sqrt(dt) * RngStream(7, 1).normal(0, (N, 4))
    assert np.all(np.abs(dW.mean(axis=0)) <= 4 * np.sqrt(dt / N))
    np.testing.assert_allclose(dW.var(axis=0), dt, rtol=0.05)


def test_operator_zero_and_flat_mode():
    g = Grid(8, 8)
    m = NoiseModel(g)
    inc = sample_wiener_increment(m, 0.1, RngStream(1), 0)
    out = apply_noise_operator(m, g.zero_vector(), g.zero_vector(), inc)
    assert out.max_abs() == 0.0
    flat = NoiseModel(g, K=1, sigma0=1.0, alpha_u=1.0, alpha_E=0.0)
    u = _field(g, np.random.default_rng(0))
    out = apply_noise_operator(flat, u, g.zero_vector(), WienerIncrement(np.ones(1), 1.0, 0, 0))
    # phi_1 is the normalised constant 1/sqrt(area) = 1 on the unit square
    np.testing.assert_allclose(out.ux, u.ux)
    np.testing.assert_allclose(out.uy, u.uy)
    assert hs_norm_sq(flat, u, g.zero_vector()) == pytest.approx(u.dot(u), rel=1e-12)
    assert hs_norm_sq(m, g.zero_vector(), g.zero_vector()) == 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 20), st.floats(0.6, 3.0))
def test_hs_norm_matches_mode_by_mode_sum(seed, K, q):
    g = Grid(9, 7)
    rng = np.random.default_rng(seed)
    m = NoiseModel(g, K=K, q=q, alpha_u=rng.normal(), alpha_E=rng.normal())
    u, E = _field(g, rng), _field(g, rng, False)
    total = 0.0
    for k in range(K):
        dW = np.zeros(K)
        dW[k] = 1.0
        col = apply_noise_operator(m, u, E, WienerIncrement(dW, 1.0, 0, 0))
        total += col.dot(col)
    assert hs_norm_sq(m, u, E) == pytest.approx(total, rel=1e-12)
    cx, cy = noise_columns(m, u, E)
    assert (np.sum(cx**2) + np.sum(cy**2)) * g.cell_area == pytest.approx(total, rel=1e-12)


def test_modes_orthonormal():
    g = Grid(32, 32)
    m = NoiseModel(g, K=10)
    X, Y = g.cell_centres()
    F = np.stack([(_cos_factor(p, 1.0, X) * _cos_factor(r, 1.0, Y)).ravel() for p, r in m.indices])
    np.testing.assert_allclose(F @ F.T * g.cell_area, np.eye(10), atol=1e-12)


def test_sigma_sum_bound_and_divergent_rejected():
    m = NoiseModel(Grid(8, 8), K=50, q=0.8)
    assert m.sigma_sq_sum <= m.sigma_sq_bound
    with pytest.raises(ValueError):
        NoiseModel(Grid(8, 8), q=-1.0)   # sigma_k = k
    with pytest.raises(ValueError):
        NoiseModel(Grid(8, 8), q=0.5)


def test_verify_default_model():
    rep = verify_assumptions(NoiseModel(Grid(32, 32)), 1000, seed=0)
    assert rep.passed
    assert 0 < rep.ell2_hat <= rep.ell2


def test_verify_zero_operator():
    rep = verify_assumptions(NoiseModel(Grid(16, 16), alpha_u=0.0, alpha_E=0.0), 200)
    assert rep.passed
    assert rep.ell1_hat == rep.ell2_hat == rep.ell3_hat == rep.ell4_hat == 0.0


def test_ito_isometry_scalar():
    # variance of sum g_n dW_n equals int g^2 dt for piecewise-constant g
    T, n, N = 1.0, 20, 10_000
    dt = T / n
    gfun = 1.0 + np.arange(n) * 0.1
    dW = np.sqrt(dt) * RngStream(3, 0).normal(0, (N, n))
    S = dW @ gfun
    target = np.sum(gfun**2) * dt
    se = target * np.sqrt(2.0 / (N - 1))
    assert abs(S.var(ddof=1) - target) <= 3 * se


def test_em_weak_order():
    e = em_weak_errors()
    assert e[0] / e[1] >= 1.8


def test_em_paths_shared_across_refinement():
    rng = RngStream(0, 0)
    a = em_linear(1.0, 0.0, 0.0, 1.0, 4, 10, rng, refine=2)
    np.testing.assert_allclose(a, 1.0)
