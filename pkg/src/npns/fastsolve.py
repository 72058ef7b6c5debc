"""Fast diagonalisation of separable operators on tensor-product grids.

Every elliptic operator of the scheme has the form ``Ax (x) I + I (x) Ay + s I``
with small symmetric 1D matrices ``Ax``, ``Ay``.  With ``Ax = Qx Lx Qx^T`` and
``Ay = Qy Ly Qy^T`` the inverse is applied by four dense products, which is
exact to rounding and vectorises over stacks of right-hand sides.  It serves
as the preconditioner of the conjugate-gradient solves.
"""

from __future__ import annotations

import numpy as np


class SeparableSolver:
    """Apply ``(Ax (x) I + I (x) Ay + shift I)^+`` to arrays shaped ``(..., nx, ny)``.

    Zero eigenvalues (the constants of a pure Neumann operator) are inverted
    to zero, so the result is the minimum-norm solution, orthogonal to the
    kernel.
    """

    def __init__(self, Ax: np.ndarray, Ay: np.ndarray, shift: float = 0.0):
        lx, self.Qx = np.linalg.eigh(np.asarray(Ax, float))
        ly, self.Qy = np.linalg.eigh(np.asarray(Ay, float))
        lam = lx[:, None] + ly[None, :] + shift
        tiny = 1e-12 * np.abs(lam).max()
        self.inv = np.where(np.abs(lam) > tiny, 1.0 / np.where(lam == 0, 1.0, lam), 0.0)
        self.shape = lam.shape
        self.QxT = np.ascontiguousarray(self.Qx.T)
        self.QyT = np.ascontiguousarray(self.Qy.T)

    def solve_grid(self, r: np.ndarray) -> np.ndarray:
        return self.Qx @ ((self.QxT @ r @ self.Qy) * self.inv) @ self.QyT

    def __call__(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, float)
        if r.ndim == 1:
            return self.solve_grid(r.reshape(self.shape)).ravel()
        # columns of a 2D array are independent right-hand sides
        k = r.shape[1]
        grids = r.T.reshape(k, *self.shape)
        return self.solve_grid(grids).reshape(k, -1).T


def neumann_1d(n: int, h: float) -> np.ndarray:
    """``-d2/dx2`` on cell centres with zero-flux ends."""
    T = 2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    T[0, 0] = T[-1, -1] = 1.0
    return T / h**2


def node_dirichlet_1d(n: int, h: float) -> np.ndarray:
    """``-d2/dx2`` on the ``n - 1`` interior nodes with zero end values."""
    m = n - 1
    return (2.0 * np.eye(m) - np.eye(m, k=1) - np.eye(m, k=-1)) / h**2


def half_dirichlet_1d(n: int, h: float) -> np.ndarray:
    """``-d2/dx2`` on cell centres with zero walls half a cell beyond the ends."""
    T = 2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    T[0, 0] = T[-1, -1] = 3.0
    return T / h**2
