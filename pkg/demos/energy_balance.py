"""Monte-Carlo check of the stochastic energy balance on a small ensemble.

Usage: ``python demos/energy_balance.py [N]``
"""

from __future__ import annotations

import sys

from npns.config import benchmark
from npns.ensemble import run_ensemble


def main(N=16):
    cfg = benchmark("balance", **{"ensemble.N": N, "time.T": 0.02})
    stats = run_ensemble(cfg)
    mean, se = stats.residual_estimate()
    work, work_se = stats.noise_work_estimate()
    print(stats.table())
    print(f"mean noise work {work:.3e} +- {work_se:.1e} (a martingale increment, mean zero)")
    print(f"|mean residual| / stderr = {abs(mean) / se:.2f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 16)
