"""Single-trajectory driver.

Each step of size ``dt``:

1. solve the Poisson problem for the current charge density;
2. draw the Wiener increment and evaluate the noise increment and its work
   ``<f(u_n, grad psi_n) dW_n, u_n>``;
3. record the diagnostics at ``t_n`` and check the stopping monitors;
4. advance the ions with ``(u_n, psi_n)``;
5. advance the velocity with the Coulomb force of ``(c_n, psi_n)`` (in the
   electrochemical form of :func:`npns.fluid.electrochemical_force`) and the
   noise increment.

The cut-off prefactors of the truncated system and the mollified potential
enter steps 4 and 5 when configured.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, SimConfig
from .diagnostics import DiagnosticsRecord, make_record, scalar_h1_norm, write_csv
from .fluid import FluidState, electrochemical_force, grad_norm_sq, step_velocity, vortex_mode
from .grid import FieldKind, Grid, ScalarField, gradient, write_snapshot
from .noise import NoiseModel, RngStream, apply_noise_operator, sample_wiener_increment
from .poisson import SolverError
from .regularization import cutoff_phi, grad_psi_w1p, mollify
from .state import SimState, electro_from_ions
from .transport import InvariantViolation, IonSpecies, IonState, StepRejected, dt_max, step_ions

STATUS_OK = "ok"
STATUS_MONITOR = "monitor"
STATUS_SOLVER = "solver_error"
STATUS_NAN = "nan"

EXIT_CODES = {STATUS_OK: 0, STATUS_MONITOR: 4, STATUS_SOLVER: 3, STATUS_NAN: 3}


class PoisonedState(RuntimeError):
    """A field became non-finite."""


# ---------------------------------------------------------------------------
# initial data


def _profile(grid: Grid, p: dict) -> ScalarField:
    if p["kind"] == "uniform":
        return grid.sample(lambda x, y: p["value"] + 0.0 * x)
    blobs = [p] if p["kind"] == "gaussian" else p["blobs"]

    def f(x, y):
        out = np.full(np.shape(x), p["background"], dtype=float)
        for b in blobs:
            cx, cy = b["center"]
            out += b["amplitude"] * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * b["width"] ** 2))
        return out

    return grid.sample(f)


def initial_ions(cfg: SimConfig) -> IonState:
    g = cfg.grid()
    ph = cfg["physics"]
    species = [IonSpecies(s["z"], s["a"], _profile(g, s["initial"])) for s in ph["species"]]
    return IonState(species, ph["entropy_delta"])


def boundary_eta(cfg: SimConfig, grid: Grid) -> np.ndarray:
    e = cfg["physics"]["eta"]
    if e["kind"] == "constant":
        return np.full(grid.n_boundary, e["value"])
    return np.concatenate([np.full(grid.ny, e["left"]), np.full(grid.ny, e["right"]),
                           np.full(grid.nx, e["bottom"]), np.full(grid.nx, e["top"])])


def relax_ions(ions: IonState, eta, varsigma: float, T: float, safety: float = 0.8) -> IonState:
    """Evolve the ions alone (fluid at rest, no noise) over ``[0, T]``.

    Used to start runs from a discrete Boltzmann equilibrium of the given
    boundary data.
    """
    g = ions.grid
    u = g.zero_vector()
    t = 0.0
    psi = None
    while t < T:
        psi = electro_from_ions(ions, eta, varsigma, x0=psi).psi
        dt = min(safety * dt_max(ions, u, psi, safety=1.0), T - t)
        ions = step_ions(ions, u, psi, dt)
        t += dt
    return ions


def initial_state(cfg: SimConfig) -> SimState:
    g = cfg.grid()
    ph = cfg["physics"]
    ions = initial_ions(cfg)
    if ph["relax_ions"] > 0:
        ions = relax_ions(ions, boundary_eta(cfg, g), ph["varsigma"], ph["relax_ions"])
    v = ph["velocity"]
    u = g.zero_vector() if v["kind"] == "zero" else vortex_mode(g, v["amplitude"])
    u.no_slip = True
    fluid = FluidState(u, g.zeros(), ph["mu"], ph["kappa"])
    electro = electro_from_ions(ions, boundary_eta(cfg, g), ph["varsigma"])
    return SimState(ions, fluid, electro, 0.0, 0)


def noise_model(cfg: SimConfig) -> NoiseModel | None:
    if cfg["noise"] is None:
        return None
    return NoiseModel.from_spec(cfg.grid(), cfg["noise"])


def choose_dt(cfg: SimConfig, state: SimState) -> tuple[float, int]:
    """Uniform step and step count covering ``[0, T]``.

    ``auto`` takes ``safety`` times the positivity bound of the initial state,
    rounded down so that an integer number of steps ends exactly at ``T``.
    """
    T = cfg["time"]["T"]
    dt = cfg["time"]["dt"]
    if dt == "auto":
        bound = dt_max(state.ions, state.fluid.u, state.psi, safety=1.0)
        dt = cfg["time"]["safety"] * bound
        if not math.isfinite(dt):
            dt = T if T > 0 else 1.0
    if T == 0:
        return float(dt), 0
    n = max(1, int(math.ceil(T / dt - 1e-9)))
    return T / n, n


# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    records: list[DiagnosticsRecord]
    status: str
    state: SimState
    dt: float
    message: str = ""
    monitor_hits: dict = field(default_factory=dict)
    failed_step: int | None = None
    csv_path: str | None = None
    snapshots: list = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.status]

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


def _thresholds(cfg: SimConfig, first: DiagnosticsRecord) -> dict:
    mon = cfg["monitors"]
    th = dict(mon["thresholds"])
    if mon["relative"]:
        T = cfg["time"]["T"]
        for k, v in th.items():
            if k == "u4_running":
                base = first.grad_u_l2**2 * 2.0 * first.kinetic * T
            elif k == "c_h1":
                base = first.c_h1_max
            else:
                base = getattr(first, k)
            th[k] = v * base
    return th


def _monitor_value(rec: DiagnosticsRecord, name: str) -> float:
    return rec.c_h1_max if name == "c_h1" else getattr(rec, name)


def _light_monitors(state: SimState, names, u4: float) -> dict:
    out = {}
    for name in names:
        if name in ("u_h1", "grad_u_l2"):
            out[name] = math.sqrt(max(grad_norm_sq(state.fluid.u), 0.0))
        elif name == "grad_psi_w13p":
            out[name] = grad_psi_w1p(state.electro.psi)
        elif name == "c_h1":
            out[name] = max(scalar_h1_norm(s.c) for s in state.ions.species)
        else:
            out[name] = u4
    return out


def _snapshot(state: SimState, directory: str, step: int, paths: list):
    t = state.t
    for i, s in enumerate(state.ions.species):
        p = os.path.join(directory, f"step{step:07d}_c{i + 1}.bin")
        write_snapshot(p, s.c, FieldKind.CONCENTRATION, t)
        paths.append(p)
    for name, fld, kind in (("psi", state.electro.psi, FieldKind.POTENTIAL),
                            ("rho", state.electro.rho, FieldKind.CHARGE),
                            ("p", state.fluid.p, FieldKind.PRESSURE),
                            ("u", state.fluid.u, FieldKind.VELOCITY)):
        p = os.path.join(directory, f"step{step:07d}_{name}.bin")
        write_snapshot(p, fld, kind, t)
        paths.append(p)


def _check_finite(state: SimState):
    bad = [f"c{i + 1}" for i, s in enumerate(state.ions.species) if not np.all(np.isfinite(s.c.values))]
    u = state.fluid.u
    if not (np.all(np.isfinite(u.ux)) and np.all(np.isfinite(u.uy))):
        bad.append("u")
    if not np.all(np.isfinite(state.electro.psi.values)):
        bad.append("psi")
    if bad:
        raise PoisonedState("non-finite values in " + ", ".join(bad))


def run_simulation(cfg: SimConfig, *, stream: int = 0, seed: int | None = None,
                   output_dir: str | None = None, record_every: int = 1,
                   state: SimState | None = None) -> RunResult:
    """Integrate one trajectory from ``t = 0`` to ``T``.

    Parameters
    ----------
    cfg : SimConfig
    stream : int
        Random stream index; ensembles use ``0 .. N-1``.
    seed : int, optional
        Overrides ``cfg["seed"]``.
    output_dir : str, optional
        Overrides ``output.directory``; no files are written when both are unset.
    record_every : int
        Keep every k-th record (the monitors still see every step).

    Returns
    -------
    RunResult
        ``status`` is ``ok``, ``monitor`` (a stopping monitor fired),
        ``solver_error`` (with ``failed_step``) or ``nan``.
    """
    seed = cfg["seed"] if seed is None else seed
    out = cfg["output"]
    directory = output_dir if output_dir is not None else out["directory"]
    if directory is not None:
        os.makedirs(directory, exist_ok=True)
    state = initial_state(cfg) if state is None else state
    dt, nsteps = choose_dt(cfg, state)
    model = noise_model(cfg)
    noisy = cfg.noise_on
    rng = RngStream(seed, stream)
    ph = cfg["physics"]
    eta, varsigma = state.electro.eta, ph["varsigma"]
    tr = cfg["truncation"]
    eps = cfg["mollifier"]["eps"]
    snap_every = out["snapshot_every"]

    records: list[DiagnosticsRecord] = []
    snapshots: list[str] = []
    thresholds = None
    hits: dict = {}
    u4 = 0.0
    status, message, failed = STATUS_OK, "", None

    start = n = state.step
    try:
        while True:
            last = n == nsteps
            if n > start:
                state.electro = electro_from_ions(state.ions, eta, varsigma, x0=state.electro.psi)
            psi = state.electro.psi
            u = state.fluid.u
            bc = state.electro.boundary_rule()
            grad_psi = gradient(psi, bc)

            xi, work = None, 0.0
            if noisy and not last:
                inc = sample_wiener_increment(model, dt, rng, n)
                xi = apply_noise_operator(model, u, grad_psi, inc)
                work = xi.dot(u)
            full = n % record_every == 0 or last or thresholds is None
            rec = None
            if full:
                rec = make_record(state, noise=model if noisy else None, E=grad_psi,
                                  u4_running=u4, noise_work=work)
                if thresholds is None:
                    thresholds = _thresholds(cfg, rec)
                records.append(rec)
                values = {name: _monitor_value(rec, name) for name in thresholds}
            else:
                values = _light_monitors(state, thresholds, u4)
            if snap_every and directory is not None and (n % snap_every == 0 or last):
                _snapshot(state, directory, n, snapshots)
            for name, level in thresholds.items():
                if name not in hits and values[name] > level:
                    hits[name] = n
            if hits:
                status = STATUS_MONITOR
                message = "stopping monitor triggered: " + ", ".join(f"{k} at step {v}" for k, v in hits.items())
                if not full:
                    records.append(make_record(state, noise=model if noisy else None, E=grad_psi,
                                               u4_running=u4, noise_work=work))
                break
            if last:
                break

            phi_u = 1.0 if tr["R_u"] is None else cutoff_phi(math.sqrt(grad_norm_sq(u)), tr["R_u"])
            phi_psi = 1.0 if tr["R_psi"] is None else cutoff_phi(grad_psi_w1p(psi), tr["R_psi"])
            psi_d = psi if eps is None else mollify(psi, eps)
            ions_new = step_ions(state.ions, u, psi_d, dt, adv_factor=phi_u, drift_factor=phi_psi)
            force = electrochemical_force(state.ions.species, psi_d, u, state.fluid.kappa,
                                          state.ions.entropy_delta)
            if phi_psi != 1.0:
                force = force * phi_psi
            if rec is None:
                state.fluid = step_velocity(state.fluid, force, xi, dt, adv_factor=phi_u)
            else:
                state.fluid, loss = step_velocity(state.fluid, force, xi, dt, adv_factor=phi_u,
                                                  return_loss=True)
                rec.viscous_loss = loss / dt
            state.ions = ions_new
            u4 += grad_norm_sq(u) * u.dot(u) * dt
            n += 1
            state.step = n
            state.t = n * dt
            _check_finite(state)
    except PoisonedState as exc:
        status, message, failed = STATUS_NAN, f"step {n}: {exc}", n
    except (SolverError, StepRejected, InvariantViolation, ValueError, FloatingPointError) as exc:
        status, message, failed = STATUS_SOLVER, f"step {n}: {type(exc).__name__}: {exc}", n

    csv_path = None
    if directory is not None and out["csv"]:
        csv_path = os.path.join(directory, out["csv"])
        write_csv(csv_path, records, len(state.ions.species))
    return RunResult(records, status, state, dt, message, hits, failed, csv_path, snapshots)
