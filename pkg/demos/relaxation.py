"""Two ion blobs relaxing at rest: free-energy decay towards Boltzmann equilibrium.

Usage: ``python demos/relaxation.py [output_dir]``
"""

from __future__ import annotations

import sys

import numpy as np

from npns.config import benchmark
from npns.simulation import run_simulation


def main(out=None):
    cfg = benchmark("relaxation", **{"time.T": 0.3})
    res = run_simulation(cfg, output_dir=out)
    E = np.array([r.free_energy for r in res.records])
    print(f"{res.state.step} steps of dt = {res.dt:.3e}, status {res.status}")
    for k in np.linspace(0, len(E) - 1, 7).astype(int):
        r = res.records[k]
        print(f"t = {r.t:6.3f}  E = {r.free_energy: .10f}  dissipation = {r.dissipation:.3e}")
    print(f"largest per-step change of E: {np.diff(E).max():.2e}")
    if res.csv_path:
        print(f"diagnostics in {res.csv_path}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else None)
