"""Monte-Carlo ensembles of independent trajectories and moment estimates."""

from __future__ import annotations

import copy
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import SimConfig
from .diagnostics import energy_balance_residual
from .simulation import STATUS_OK, initial_state, run_simulation

# functionals whose pathwise suprema are collected
SUP_FUNCTIONALS = ("u_l2", "u_h1", "c_h1", "grad_u_l2", "grad_psi_w13p", "u4_running", "free_energy")


def moment_estimate(samples, p: float = 1.0) -> tuple[float, float]:
    """Mean of ``x**p`` over the samples and its standard error ``std / sqrt(N)``.

    The standard error is ``nan`` for a single sample.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("moment of an empty sample")
    if not p >= 1:
        raise ValueError("moment order must be at least 1")
    xp = x**p
    if x.size < 2:
        return float(xp.mean()), math.nan
    return float(xp.mean()), float(xp.std(ddof=1) / math.sqrt(x.size))


def _functional(rec, name):
    if name == "u_l2":
        return math.sqrt(2.0 * rec.kinetic)
    if name == "c_h1":
        return rec.c_h1_max
    if name == "free_energy":
        return rec.free_energy
    return getattr(rec, name)


@dataclass
class TrajectorySummary:
    stream: int
    status: str
    message: str
    sups: dict
    energy_residual: float
    noise_work: float
    steps: int
    csv_path: str | None = None


@dataclass
class EnsembleStats:
    N: int
    p_list: list
    summaries: list[TrajectorySummary]
    moments: dict = field(default_factory=dict)   # (name, p) -> (mean, stderr)

    @property
    def completed(self) -> list[TrajectorySummary]:
        return [s for s in self.summaries if s.status == STATUS_OK]

    @property
    def failures(self) -> list[TrajectorySummary]:
        return [s for s in self.summaries if s.status != STATUS_OK]

    def sup_samples(self, name: str) -> np.ndarray:
        return np.array([s.sups[name] for s in self.completed])

    @property
    def residuals(self) -> np.ndarray:
        return np.array([s.energy_residual for s in self.completed])

    @property
    def noise_work(self) -> np.ndarray:
        return np.array([s.noise_work for s in self.completed])

    def residual_estimate(self) -> tuple[float, float]:
        return moment_estimate(self.residuals, 1)

    def noise_work_estimate(self) -> tuple[float, float]:
        return moment_estimate(self.noise_work, 1)

    def table(self) -> str:
        lines = [f"trajectories: {len(self.completed)} ok, {len(self.failures)} failed"]
        for (name, p), (m, se) in sorted(self.moments.items()):
            lines.append(f"E[sup {name}^{p:g}] = {m:.6g} +- {se:.2g}")
        if self.completed:
            m, se = self.residual_estimate()
            lines.append(f"energy-balance residual: mean {m:.4g}, stderr {se:.2g}")
        for f in self.failures:
            lines.append(f"stream {f.stream}: {f.status}: {f.message}")
        return "\n".join(lines)


def _run_one(args) -> TrajectorySummary:
    data, stream, directory, record_every, state = args
    cfg = SimConfig(data)
    out_dir = None
    if directory is not None:
        out_dir = os.path.join(directory, f"traj{stream:04d}")
    try:
        res = run_simulation(cfg, stream=stream, output_dir=out_dir, record_every=record_every,
                             state=copy.deepcopy(state))
    except Exception as exc:  # crash isolation: report, never propagate
        return TrajectorySummary(stream, "crashed", f"{type(exc).__name__}: {exc}", {}, math.nan, math.nan, 0)
    recs = res.records
    sups = {name: max(_functional(r, name) for r in recs) for name in SUP_FUNCTIONALS} if recs else {}
    resid = energy_balance_residual(recs) if record_every == 1 and len(recs) > 1 else math.nan
    work = float(sum(r.noise_work for r in recs[:-1])) if record_every == 1 else math.nan
    return TrajectorySummary(stream, res.status, res.message, sups, resid, work,
                             res.state.step, res.csv_path)


def worker_count(cfg: SimConfig, requested: int | None = None) -> int:
    """Workers for an ensemble: the request, capped by ``NPNS_THREADS`` and the CPU count."""
    n = requested or cfg["ensemble"]["workers"] or os.cpu_count() or 1
    env = os.environ.get("NPNS_THREADS")
    if env:
        try:
            n = min(n, max(1, int(env)))
        except ValueError:
            pass
    return max(1, min(n, cfg["ensemble"]["N"]))


def run_ensemble(cfg: SimConfig, *, workers: int | None = None, output_dir: str | None = None,
                 record_every: int = 1) -> EnsembleStats:
    """Run ``ensemble.N`` trajectories on streams ``0 .. N-1`` and reduce them.

    Results do not depend on the number of workers: each trajectory is a pure
    function of ``(config, seed, stream)`` and the reduction runs in stream
    order.  A failing trajectory is reported in the stats and the others
    continue.  The initial state (including any ion pre-relaxation) is built
    once and shared by all trajectories.
    """
    N = cfg["ensemble"]["N"]
    if N < 2:
        raise ValueError("an ensemble needs N >= 2")
    directory = output_dir if output_dir is not None else cfg["output"]["directory"]
    state0 = initial_state(cfg)
    jobs = [(cfg.to_dict(), k, directory, record_every, state0) for k in range(N)]
    nw = worker_count(cfg, workers)
    if nw == 1:
        summaries = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=nw) as pool:
            summaries = list(pool.map(_run_one, jobs))
    stats = EnsembleStats(N, list(cfg["ensemble"]["p_list"]), summaries)
    if len(stats.completed) >= 1:
        for name in SUP_FUNCTIONALS:
            x = stats.sup_samples(name)
            for p in stats.p_list:
                # fractional powers are taken of |x| (the free energy may be negative)
                stats.moments[(name, p)] = moment_estimate(np.abs(x) if p != int(p) else x, p)
    return stats


def jensen_gap(sup_samples, p_low: float = 2.0, p_high: float = 4.0) -> tuple[float, float]:
    """``E[X^p_high] - E[X^p_low]^(p_high/p_low)`` and a propagated standard error.

    Non-negative in expectation by Jensen's inequality.
    """
    x = np.asarray(sup_samples, float)
    r = p_high / p_low
    hi, se_hi = moment_estimate(x, p_high)
    lo, se_lo = moment_estimate(x, p_low)
    gap = hi - lo**r
    se = math.sqrt(se_hi**2 + (r * lo ** (r - 1) * se_lo) ** 2)
    return gap, se
