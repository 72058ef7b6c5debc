"""Paired blow-up indicators along a stochastic trajectory.

Usage: ``python demos/blowup_monitors.py``
"""

from __future__ import annotations

from npns.config import benchmark
from npns.regularization import equivalence_constant, first_hit, measured_paired_threshold
from npns.simulation import run_simulation


def main():
    # the fluid starts at rest and is stirred by the noise, so the norms grow
    cfg = benchmark("balance", **{"time.T": 0.02})
    recs = run_simulation(cfg, seed=1).records
    K = equivalence_constant(recs)
    A = [r.u_h1 + r.c_h1_max for r in recs]
    B = [r.grad_u_l2 + r.grad_psi_w13p for r in recs]
    print(f"measured equivalence constant K = {K:.3f}")
    for M in (A[0] + f * (max(A) - A[0]) for f in (0.2, 0.5, 0.9)):
        level = measured_paired_threshold(M, K)
        print(f"M = {M:.3f}: (u,c) hit at {first_hit(A, M)}, "
              f"(grad u, grad psi) > {level:.3f} hit at {first_hit(B, level)}")


if __name__ == "__main__":
    main()
