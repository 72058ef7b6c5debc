"""Full coupled state of one trajectory."""

from __future__ import annotations

from dataclasses import dataclass

from .fluid import FluidState
from .poisson import ElectroState, solve_poisson
from .transport import IonState


@dataclass(eq=False)
class SimState:
    ions: IonState
    fluid: FluidState
    electro: ElectroState
    t: float = 0.0
    step: int = 0

    @property
    def grid(self):
        return self.ions.grid

    @property
    def psi(self):
        return self.electro.psi

    @property
    def u(self):
        return self.fluid.u


def electro_from_ions(ions: IonState, eta, varsigma: float, *, project: bool = False,
                      x0=None, tol: float = 1e-10) -> ElectroState:
    """Solve for the potential generated by the current charge density."""
    return solve_poisson(ions.charge_density(), eta, varsigma, tol=tol, project=project,
                         x0=x0, return_state=True)
