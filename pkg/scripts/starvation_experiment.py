"""Demonstrate worker starvation when the work-unit count drops below the
pool size, and its cure by kernel splitting.

The awkward regime is leaves ~= workers/2: one heavy multipole interaction
batch per leaf leaves most of the pool idle unless each batch is split into
finer tasks.  This script times the same long-range interaction workload at
several tasks-per-kernel settings and prints the speedup table.

Usage:
    python3 scripts/starvation_experiment.py [--workers 4] [--units 2]
        [--batch 400000] [--splits 1,2,4,16] [--repeats 3]
"""

import argparse
import time

import numpy as np

from octomini import simd as V
from octomini.engine import SplitPolicy, TaskEngine


def run_phase(engine, units, lanes, tasks_per_kernel):
    policy = SplitPolicy(tasks_per_kernel=tasks_per_kernel)
    handles = []
    for dx, dy, dz, m, quad, octm in units:
        for lo, hi in policy.chunks(dx.shape[0]):
            handles.append(engine.submit(
                V.run_m2l_kernel, dx[lo:hi], dy[lo:hi], dz[lo:hi],
                m[lo:hi], quad[:, lo:hi], octm[:, lo:hi], lanes))
    engine.when_all(handles).result()
    return len(handles)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--units", type=int, default=None,
                    help="heavy work units (default workers // 2)")
    ap.add_argument("--batch", type=int, default=400_000,
                    help="interaction pairs per unit")
    ap.add_argument("--splits", default="1,2,4,16")
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=5)
    args = ap.parse_args()

    n_units = args.units if args.units is not None else args.workers // 2
    splits = [int(s) for s in args.splits.split(",")]
    rng = np.random.default_rng(args.seed)
    units = [V.random_m2l_batch(rng, args.batch) for _ in range(n_units)]
    lanes = V.LaneConfig(8, "vector")

    print(f"workers={args.workers}  units={n_units}  "
          f"pairs/unit={args.batch}  repeats={args.repeats} (min taken)")
    print(f"{'tasks/kernel':>12}  {'tasks':>6}  {'wall_ms':>8}  "
          f"{'speedup':>7}")

    base = None
    with TaskEngine(args.workers) as engine:
        run_phase(engine, units, lanes, splits[0])   # warm the pool
        for T in splits:
            best = float("inf")
            for _ in range(args.repeats):
                t0 = time.perf_counter()
                n_tasks = run_phase(engine, units, lanes, T)
                best = min(best, time.perf_counter() - t0)
            if base is None:
                base = best
            print(f"{T:>12}  {n_tasks:>6}  {best * 1e3:>8.1f}  "
                  f"{base / best:>6.2f}x")


if __name__ == "__main__":
    main()
