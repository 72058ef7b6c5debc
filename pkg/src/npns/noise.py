"""Truncated cylindrical Wiener noise and the multiplicative noise operator.

The operator realised here acts on the k-th basis vector as

    f(u, grad psi) e_k = sigma_k * phi_k * (alpha_u * u + alpha_E * grad psi),

with ``sigma_k = sigma0 * k**(-q)`` and ``phi_k`` cosine products that are
orthonormal in L2 of the box.  Everything is evaluated on interior faces of
the MAC grid, where the velocity lives.  Being linear, the operator has
closed-form growth and Lipschitz constants.

Random numbers come from a counter-based Philox stream keyed on
``(seed, stream)`` with the step index in the counter, so any increment can
be regenerated without replaying the ones before it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import zeta

from .grid import Grid, VectorField, check_same_grid

MODE_FAMILIES = ("cosine",)


def _mode_indices(K: int) -> list[tuple[int, int]]:
    out = []
    s = 0
    while len(out) < K:
        for p in range(s + 1):
            out.append((p, s - p))
        s += 1
    return out[:K]


def _cos_factor(p: int, L: float, x):
    if p == 0:
        return np.full_like(x, 1.0 / np.sqrt(L), dtype=float)
    return np.sqrt(2.0 / L) * np.cos(p * np.pi * x / L)


@dataclass(eq=False)
class NoiseModel:
    grid: Grid
    K: int = 16
    sigma0: float = 1.0
    q: float = 1.0
    alpha_u: float = 1.0
    alpha_E: float = 0.5
    mode_family: str = "cosine"

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if not self.q > 0.5:
            raise ValueError(f"sigma_k = sigma0 k^-q is not square-summable for q = {self.q} <= 1/2")
        if self.sigma0 < 0:
            raise ValueError("sigma0 must be non-negative")
        if self.mode_family not in MODE_FAMILIES:
            raise ValueError(f"unknown mode family {self.mode_family!r}")
        g = self.grid
        k = np.arange(1, self.K + 1, dtype=float)
        self.sigma = self.sigma0 * k ** (-self.q)
        self.indices = _mode_indices(self.K)
        Xx, Yx = g.xface_centres()
        Xy, Yy = g.yface_centres()
        self.modes_x = np.stack([_cos_factor(p, g.Lx, Xx) * _cos_factor(r, g.Ly, Yx)
                                 for p, r in self.indices])
        self.modes_y = np.stack([_cos_factor(p, g.Lx, Xy) * _cos_factor(r, g.Ly, Yy)
                                 for p, r in self.indices])
        # noise never acts on wall-normal faces
        self.modes_x[:, 0] = self.modes_x[:, -1] = 0.0
        self.modes_y[:, :, 0] = self.modes_y[:, :, -1] = 0.0
        s2 = self.sigma[:, None, None] ** 2
        self._weight_x = np.sum(s2 * self.modes_x**2, axis=0)
        self._weight_y = np.sum(s2 * self.modes_y**2, axis=0)

    @classmethod
    def from_spec(cls, grid: Grid, spec: dict) -> NoiseModel:
        return cls(grid, **spec)

    def spec(self) -> dict:
        return dict(K=self.K, sigma0=self.sigma0, q=self.q, alpha_u=self.alpha_u,
                    alpha_E=self.alpha_E, mode_family=self.mode_family)

    @property
    def sigma_sq_sum(self) -> float:
        return float(np.sum(self.sigma**2))

    @property
    def sigma_sq_bound(self) -> float:
        """``sigma0^2 zeta(2q)``, the untruncated sum."""
        return float(self.sigma0**2 * zeta(2.0 * self.q))

    @property
    def mode_sup_sq(self) -> float:
        return float(max(np.abs(self.modes_x).max(), np.abs(self.modes_y).max()) ** 2)

    @property
    def ell1(self) -> float:
        """Growth constant: ``|f(u, E)|_HS^2 <= ell1 (|u|^2 + |E|^2)``."""
        return 2.0 * (self.alpha_u**2 + self.alpha_E**2) * self.sigma_sq_sum * self.mode_sup_sq

    @property
    def ell2(self) -> float:
        # f is linear in (u, E), so the Lipschitz constant equals the growth constant
        return self.ell1

    def ell3(self) -> float:
        """Constant of the H1 growth bound on this grid.

        ``|v|_H1^2 <= (1 + lam_max) |v|^2`` for wall-vanishing face fields, and
        ``|u|^2 <= C_P |grad u|^2`` by the discrete Poincare inequality.
        """
        lam_max, c_p = _velocity_spectrum_bounds(self.grid)
        return (1.0 + lam_max) * self.ell1 * max(c_p, 1.0)

    ell4 = ell3

    def coefficient(self, dW: np.ndarray):
        """Face fields ``sum_k sigma_k dW_k phi_k``."""
        w = self.sigma * np.asarray(dW, float)
        return np.tensordot(w, self.modes_x, axes=1), np.tensordot(w, self.modes_y, axes=1)


def _mixed(model: NoiseModel, u: VectorField, E: VectorField):
    return model.alpha_u * u.ux + model.alpha_E * E.ux, model.alpha_u * u.uy + model.alpha_E * E.uy


def _velocity_spectrum_bounds(grid: Grid):
    # Gershgorin bound on -Delta_h and the exact smallest eigenvalue of the
    # tensor-product viscous operator (node Dirichlet x half-cell Dirichlet)
    lam_max = 4.0 / grid.hx**2 + 4.0 / grid.hy**2
    lx = 4.0 / grid.hx**2 * np.sin(np.pi / (2 * grid.nx)) ** 2
    ly_half = _half_dirichlet_min(grid.ny) / grid.hy**2
    lx_half = _half_dirichlet_min(grid.nx) / grid.hx**2
    ly = 4.0 / grid.hy**2 * np.sin(np.pi / (2 * grid.ny)) ** 2
    lam_min = min(lx + ly_half, lx_half + ly)
    return lam_max, 1.0 / lam_min


def _half_dirichlet_min(n):
    d = -2.0 * np.ones(n)
    d[0] = d[-1] = -3.0
    T = np.diag(d) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)
    return float(np.min(np.linalg.eigvalsh(-T)))


# ---------------------------------------------------------------------------
# random increments


@dataclass(frozen=True)
class RngStream:
    """Counter-based normal stream addressed by ``(seed, stream, step)``."""

    seed: int
    stream: int = 0

    def _generator(self, step: int) -> np.random.Generator:
        key = np.random.SeedSequence([self.seed, self.stream]).generate_state(2, np.uint64)
        bitgen = np.random.Philox(key=key, counter=np.array([0, step, 0, 0], dtype=np.uint64))
        return np.random.Generator(bitgen)

    def normal(self, step: int, size) -> np.ndarray:
        return self._generator(step).standard_normal(size)


@dataclass(frozen=True)
class WienerIncrement:
    dW: np.ndarray
    dt: float
    stream: int
    step: int


def sample_wiener_increment(model: NoiseModel, dt: float, rng: RngStream, step: int) -> WienerIncrement:
    """``K`` independent ``N(0, dt)`` draws for one time step."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    dW = np.sqrt(dt) * rng.normal(step, model.K)
    return WienerIncrement(dW, dt, rng.stream, step)


def apply_noise_operator(model: NoiseModel, u: VectorField, E: VectorField,
                         inc: WienerIncrement) -> VectorField:
    """``sum_k f(u, E) e_k dW_k`` on interior faces."""
    check_same_grid(u, E)
    if u.grid != model.grid:
        raise ValueError("noise model and fields live on different grids")
    gx, gy = model.coefficient(inc.dW)
    wx, wy = _mixed(model, u, E)
    return VectorField(gx * wx, gy * wy, u.grid)


def noise_columns(model: NoiseModel, u: VectorField, E: VectorField):
    """Stacks of ``f(u, E) e_k`` for all modes: shapes ``(K, nx+1, ny)``, ``(K, nx, ny+1)``."""
    wx, wy = _mixed(model, u, E)
    s = model.sigma[:, None, None]
    return s * model.modes_x * wx, s * model.modes_y * wy


def hs_norm_sq(model: NoiseModel, u: VectorField, E: VectorField) -> float:
    """Unhalved Hilbert-Schmidt norm ``sum_k |f(u, E) e_k|_L2^2``."""
    wx, wy = _mixed(model, u, E)
    return float((np.sum(model._weight_x * wx**2) + np.sum(model._weight_y * wy**2))
                 * model.grid.cell_area)


def hs_h1_norm_sq(model: NoiseModel, u: VectorField, E: VectorField) -> float:
    """``sum_k |f e_k|_H1^2`` with the viscous gradient for the seminorm."""
    from .fluid import grad_norm_sq
    cx, cy = noise_columns(model, u, E)
    total = 0.0
    for k in range(model.K):
        v = VectorField(cx[k], cy[k], model.grid)
        total += v.dot(v) + grad_norm_sq(v)
    return total


# ---------------------------------------------------------------------------
# assumption checks


@dataclass
class AssumptionReport:
    ell1: float
    ell2: float
    ell3: float
    ell4: float
    ell1_hat: float
    ell2_hat: float
    ell3_hat: float
    ell4_hat: float
    n_samples: int

    @property
    def passed(self) -> bool:
        tol = 1.0 + 1e-9
        return (self.ell1_hat <= self.ell1 * tol and self.ell2_hat <= self.ell2 * tol
                and self.ell3_hat <= self.ell3 * tol and self.ell4_hat <= self.ell4 * tol)


def _random_pair(grid: Grid, rng: np.random.Generator):
    from .grid import gradient, BoundaryRule, ScalarField
    u = VectorField(rng.normal(size=(grid.nx + 1, grid.ny)),
                    rng.normal(size=(grid.nx, grid.ny + 1)), grid, no_slip=True)
    if rng.random() < 0.5:
        # smooth potential gradient
        X, Y = grid.cell_centres()
        a, b, c = rng.normal(size=3)
        psi = ScalarField(a * np.cos(np.pi * X * rng.integers(1, 4)) * np.cos(np.pi * Y)
                          + b * X * Y + c * Y**2, grid)
        E = gradient(psi, BoundaryRule.neumann(grid))
        u = u * rng.uniform(0, 2)
    else:
        E = VectorField(rng.normal(size=(grid.nx + 1, grid.ny)),
                        rng.normal(size=(grid.nx, grid.ny + 1)), grid)
    return u, E


def _h1_face_norm_sq(E: VectorField) -> float:
    g = E.grid
    gx = np.diff(E.ux, axis=0) / g.hx, np.diff(E.ux, axis=1) / g.hy
    gy = np.diff(E.uy, axis=0) / g.hx, np.diff(E.uy, axis=1) / g.hy
    semi = sum(float(np.sum(a**2)) for a in (*gx, *gy)) * g.cell_area
    return E.dot(E) + semi


def verify_assumptions(model: NoiseModel, n_samples: int = 1000, seed: int = 0) -> AssumptionReport:
    """Sampled sup of the growth and Lipschitz ratios against the closed-form constants."""
    from .fluid import grad_norm_sq
    if n_samples < 100:
        raise ValueError("need at least 100 samples")
    g = model.grid
    rng = np.random.default_rng(seed)
    r1 = r2 = r3 = r4 = 0.0
    n_h1 = max(n_samples // 20, 5)
    for k in range(n_samples):
        u1, E1 = _random_pair(g, rng)
        u2, E2 = _random_pair(g, rng)
        den1 = u1.dot(u1) + E1.dot(E1)
        if den1 > 0:
            r1 = max(r1, hs_norm_sq(model, u1, E1) / den1)
        du, dE = u1 - u2, E1 - E2
        den2 = du.dot(du) + dE.dot(dE)
        if den2 > 0:
            diff = hs_norm_sq(model, du, dE)
            r2 = max(r2, diff / den2)
        if k < n_h1:
            # H1 checks are K projections-free but still K gradient evaluations each
            den3 = grad_norm_sq(u1) + _h1_face_norm_sq(E1)
            if den3 > 0:
                r3 = max(r3, hs_h1_norm_sq(model, u1, E1) / den3)
            den4 = grad_norm_sq(du) + _h1_face_norm_sq(dE)
            if den4 > 0:
                r4 = max(r4, hs_h1_norm_sq(model, du, dE) / den4)
    ell3 = model.ell3()
    return AssumptionReport(model.ell1, model.ell2, ell3, ell3, r1, r2, r3, r4, n_samples)


# ---------------------------------------------------------------------------
# scalar test equation dX = lam X dt + sig X dW


def em_linear(x0: float, lam: float, sig: float, T: float, n_steps: int, n_paths: int,
              rng: RngStream, refine: int = 1):
    """Euler-Maruyama endpoints of the linear test SDE.

    The Brownian path is drawn on the grid ``T / (n_steps * refine)`` and
    summed in blocks of ``refine``, so runs with different ``refine`` share
    one path per sample.
    """
    fine = n_steps * refine
    dt = T / n_steps
    z = rng.normal(0, (n_paths, fine)) * np.sqrt(T / fine)
    dW = z.reshape(n_paths, n_steps, refine).sum(axis=2)
    x = np.full(n_paths, float(x0))
    for n in range(n_steps):
        x = x + lam * x * dt + sig * x * dW[:, n]
    return x


def em_weak_errors(x0=1.0, lam=2.0, sig=0.1, T=1.0, steps=(20, 40), n_paths=10_000, seed=0):
    """``|mean X_T - x0 exp(lam T)|`` for each step count, on common Brownian paths."""
    rng = RngStream(seed, 0)
    finest = max(steps)
    errs = []
    for n in steps:
        xT = em_linear(x0, lam, sig, T, n, n_paths, rng, refine=finest // n)
        errs.append(abs(float(xT.mean()) - x0 * np.exp(lam * T)))
    return errs
