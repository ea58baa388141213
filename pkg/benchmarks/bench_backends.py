"""Time the numba and pure-numpy kernels on identical workloads.

Each backend runs in its own interpreter because the choice is fixed at
import time through ``VL_BACKEND``.  Numba timings exclude compilation.

    python benchmarks/bench_backends.py --samples 40
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from vortexliouville._backend import BACKEND
from vortexliouville.dynamics import FlowOptions, flow_batch
from vortexliouville.ensemble import MeasureSpec, sample_batch
from vortexliouville.geometry import Geometry

samples, sweeps = int(sys.argv[1]), int(sys.argv[2])
out = {"backend": BACKEND}
for kind in ("torus", "sphere"):
    g = Geometry(kind)
    P = sample_batch(MeasureSpec("uniform", g, 4, (1.0, -1.0, 1.0, -1.0)), samples, 1).positions
    opts = FlowOptions(epsilon=0.05, rel_tol=1e-9, abs_tol=1e-11)
    flow_batch(g, P[:1], np.array([1.0, -1.0, 1.0, -1.0]), 0.01, opts)  # warm-up / compile
    t0 = time.perf_counter()
    flow_batch(g, P, np.array([1.0, -1.0, 1.0, -1.0]), 1.0, opts)
    out[f"flow_{kind}_per_sample_ms"] = 1e3 * (time.perf_counter() - t0) / samples
    spec = MeasureSpec("gibbs", g, 4, (1.0, -1.0, 1.0, -1.0), beta=1.0, burn_in_sweeps=10,
                       thin_sweeps=1)
    sample_batch(spec, 1, 2)
    spec = MeasureSpec("gibbs", g, 4, (1.0, -1.0, 1.0, -1.0), beta=1.0, burn_in_sweeps=sweeps,
                       thin_sweeps=1)
    t0 = time.perf_counter()
    sample_batch(spec, 8, 3)
    out[f"gibbs_{kind}_per_sweep_us"] = 1e6 * (time.perf_counter() - t0) / (8 * (sweeps + 1))
print(json.dumps(out))
"""


def run(backend: str, samples: int, sweeps: int) -> dict:
    env = dict(os.environ, VL_BACKEND=backend)
    proc = subprocess.run([sys.executable, "-c", WORKER, str(samples), str(sweeps)], env=env,
                          capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--samples", type=int, default=40, help="trajectories per geometry")
    p.add_argument("--sweeps", type=int, default=200, help="Metropolis sweeps per chain")
    args = p.parse_args(argv)
    results = {b: run(b, args.samples, args.sweeps) for b in ("numba", "numpy")}
    keys = [k for k in results["numba"] if k != "backend"]
    print(f"{'workload':32s} {'numba':>12s} {'numpy':>12s} {'speed-up':>9s}")
    for k in keys:
        a, b = results["numba"][k], results["numpy"][k]
        print(f"{k:32s} {a:12.4g} {b:12.4g} {b / a:9.1f}")


if __name__ == "__main__":
    main()
