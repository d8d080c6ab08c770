#!/usr/bin/env python3
"""Compare the compiled tape evaluator against the pure-Python fallback.

Two measurements:

* rate/reward table evaluation (the hot kernel: every integrator stage,
  policy-iteration sweep, and finite-difference probe re-evaluates all
  S*S*A + S*A expression programs), run in-process against each backend;
* an end-to-end trajectory integration per backend, run in a subprocess
  with MFGDYN_BACKEND set, since the backend is chosen at import time.

Usage: python benchmarks/bench_kernels.py [--table-evals N] [--skip-e2e]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np


def bench_tables(n_evals):
    from mfgdyn.examples import congestion_model, consumer_choice_model
    from mfgdyn.kernels import backends

    rng = np.random.default_rng(0)
    rows = []
    for name, model in (("consumer-choice", consumer_choice_model()),
                        ("congestion", congestion_model())):
        points = rng.dirichlet(np.ones(model.state_count), size=n_evals)
        tables = model.tables
        timings = {}
        for backend, impl in sorted(backends().items()):
            start = time.perf_counter()
            for m in points:
                tables.q_r(m, impl=impl)
            timings[backend] = time.perf_counter() - start
        rows.append((name, timings))
    print(f"table evaluation ({n_evals} points, rates + rewards):")
    for name, timings in rows:
        parts = []
        for backend, seconds in sorted(timings.items()):
            parts.append(f"{backend}: {n_evals / seconds:10.0f} evals/s")
        line = f"  {name:16s} " + "   ".join(parts)
        if "cython" in timings and "python" in timings:
            line += f"   speedup x{timings['python'] / timings['cython']:.1f}"
        print(line)


_E2E_SNIPPET = """
import time
from mfgdyn.kernels import BACKEND_NAME
from mfgdyn.dynamics import integrate
from mfgdyn.examples import congestion_model
model = congestion_model()
start = time.perf_counter()
for _ in range(3):
    integrate(model, [0.4, 0.2, 0.4], horizon=30.0)
print(f"{BACKEND_NAME} {time.perf_counter() - start:.3f}")
"""


def bench_end_to_end():
    print("trajectory integration (3 runs of the congestion model, switch + sliding):")
    results = {}
    for backend in ("python", "cython"):
        env = dict(os.environ, MFGDYN_BACKEND=backend)
        proc = subprocess.run([sys.executable, "-c", _E2E_SNIPPET], env=env,
                              capture_output=True, text=True)
        if proc.returncode != 0:
            print(f"  {backend}: unavailable ({proc.stderr.strip().splitlines()[-1]})")
            continue
        name, seconds = proc.stdout.split()
        results[name] = float(seconds)
        print(f"  {name:8s} {float(seconds):7.3f} s")
    if len(results) == 2:
        print(f"  speedup x{results['python'] / results['cython']:.1f}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--table-evals", type=int, default=20000)
    parser.add_argument("--skip-e2e", action="store_true")
    args = parser.parse_args()
    bench_tables(args.table_evals)
    if not args.skip_e2e:
        bench_end_to_end()


if __name__ == "__main__":
    main()
