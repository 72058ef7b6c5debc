"""Command line entry point ``npns``.

Exit codes: 0 ok, 1 verification failed (``verify-noise``, ``mms``),
2 configuration error, 3 solver error or non-finite state, 4 a stopping
monitor ended the run.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, SimConfig

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_SOLVER, EXIT_MONITOR = 0, 1, 2, 3, 4


def _load(args) -> SimConfig:
    return SimConfig.load(args.config, args.set or ())


def _cmd_run(args) -> int:
    from .simulation import run_simulation
    cfg = _load(args)
    res = run_simulation(cfg, output_dir=args.output)
    last = res.records[-1] if res.records else None
    print(f"status: {res.status}  steps: {res.state.step}  dt: {res.dt:.6g}  t: {res.state.t:.6g}")
    if last is not None:
        print(f"free energy: {res.records[0].free_energy:.10g} -> {last.free_energy:.10g}")
        print("masses: " + ", ".join(f"{m:.15g}" for m in last.masses))
    if res.message:
        print(res.message)
    if res.csv_path:
        print(f"diagnostics written to {res.csv_path}")
    return res.exit_code


def _cmd_ensemble(args) -> int:
    from .ensemble import run_ensemble
    from .simulation import STATUS_MONITOR
    cfg = _load(args)
    stats = run_ensemble(cfg, workers=args.workers, output_dir=args.output)
    print(stats.table())
    statuses = {s.status for s in stats.failures}
    if statuses - {STATUS_MONITOR}:
        return EXIT_SOLVER
    if statuses:
        return EXIT_MONITOR
    return EXIT_OK


def _cmd_verify_noise(args) -> int:
    from .noise import verify_assumptions
    from .simulation import noise_model
    cfg = _load(args)
    model = noise_model(cfg)
    if model is None:
        from .noise import NoiseModel
        model = NoiseModel(cfg.grid())
    rep = verify_assumptions(model, args.samples, seed=args.seed)
    for k in range(1, 5):
        print(f"ell{k}: sampled {getattr(rep, f'ell{k}_hat'):.6g} <= bound {getattr(rep, f'ell{k}'):.6g}")
    print("pass" if rep.passed else "FAIL")
    return EXIT_OK if rep.passed else EXIT_FAILED


def _cmd_mms(args) -> int:
    from .poisson import mms_convergence
    ok = True
    for vs in (1.0, 0.0):
        errs, ratios = mms_convergence(tuple(args.ns), varsigma=vs)
        label = "Robin varsigma=1" if vs else "Neumann varsigma=0"
        print(label)
        for n, e in zip(args.ns, errs):
            print(f"  n={n:4d}  L2 error {e:.4e}")
        for r in ratios:
            print(f"  ratio {r:.4f}")
        ok = ok and all(r >= 3.7 for r in ratios)
    print("pass" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="npns", description="stochastic Nernst-Planck-Navier-Stokes simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("config", help="YAML configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a dotted configuration key (repeatable)")
        return sp

    r = with_config(sub.add_parser("run", help="integrate one trajectory"))
    r.add_argument("--output", help="output directory (overrides output.directory)")
    r.set_defaults(func=_cmd_run)

    e = with_config(sub.add_parser("ensemble", help="run ensemble.N trajectories"))
    e.add_argument("--output", help="output directory (overrides output.directory)")
    e.add_argument("--workers", type=int, help="worker processes (capped by NPNS_THREADS)")
    e.set_defaults(func=_cmd_ensemble)

    v = with_config(sub.add_parser("verify-noise", help="sample the noise growth/Lipschitz ratios"))
    v.add_argument("--samples", type=int, default=1000)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=_cmd_verify_noise)

    m = sub.add_parser("mms", help="manufactured-solution convergence of the Poisson solver")
    m.add_argument("--ns", type=int, nargs="+", default=[32, 64, 128])
    m.set_defaults(func=_cmd_mms)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        if args.command == "verify-noise":
            print(f"configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        raise


if __name__ == "__main__":
    sys.exit(main())
