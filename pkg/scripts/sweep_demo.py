"""Run a small benchmark sweep over worker counts and SIMD modes and print
the resulting CSV plus a throughput summary.

The sweep exercises the same code path as `octomini sweep`; this script is
the scripted equivalent with a compact default matrix, useful as a smoke
check on a fresh machine.

Usage:
    python3 scripts/sweep_demo.py [--scenario sod] [--steps 5]
        [--workers 1,2,4] [--simd scalar,vector] [--out sweep.csv]
"""

import argparse
import itertools

from octomini import bench as B
from octomini import scenarios as S


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="sod")
    ap.add_argument("--max-level", type=int, default=1)
    ap.add_argument("--n-edge", type=int, default=8)
    ap.add_argument("--steps", type=int, default=5)
    ap.add_argument("--workers", default="1,2,4")
    ap.add_argument("--simd", default="scalar,vector")
    ap.add_argument("--out", default="sweep.csv")
    args = ap.parse_args()

    if args.scenario in S.PRESETS:
        cfg = S.preset_config(args.scenario, steps=args.steps)
    else:
        cfg = S.ScenarioConfig(kind=args.scenario, max_level=args.max_level,
                               n_edge=args.n_edge, steps=args.steps)

    workers = [int(w) for w in args.workers.split(",")]
    simds = args.simd.split(",")
    settings = [B.RunSettings(workers=w, simd=s)
                for w, s in itertools.product(workers, simds)]

    records = B.sweep(cfg, settings, args.out)

    print(f"wrote {len(records)} rows to {args.out}")
    print(f"{'workers':>7}  {'simd':>6}  {'wall_s':>8}  {'cells/s':>12}")
    for st, rec in zip(settings, records):
        print(f"{st.workers:>7}  {st.simd:>6}  {rec.wall_s:>8.3f}  "
              f"{rec.cells_per_s:>12.1f}")


if __name__ == "__main__":
    main()
