"""plotviz command line: scaling and toggle figures from benchmark CSVs.

Exit codes: 0 success, 2 usage or data error.
"""

import argparse
import sys

from .figures import PlotSpec, PlotvizError, plot_scaling, plot_toggle_compare


def _build_parser():
    ap = argparse.ArgumentParser(prog="plotviz")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("scaling", "toggle"):
        p = sub.add_parser(name)
        p.add_argument("--csv", nargs="+", required=True,
                       help="benchmark CSV file(s), concatenated in order")
        p.add_argument("--x", default="workers")
        p.add_argument("--group", default="simd")
        p.add_argument("--out", default="fig.png")
        p.add_argument("--log2", action="store_true")
        p.add_argument("--speedup", action="store_true")
    return ap


def main(argv=None):
    args = _build_parser().parse_args(argv)
    spec = PlotSpec(csv_paths=tuple(args.csv), x=args.x, group=args.group,
                    out=args.out, log2=args.log2, speedup=args.speedup)
    fn = plot_scaling if args.command == "scaling" else plot_toggle_compare
    try:
        out = fn(spec)
    except (PlotvizError, OSError) as exc:
        print(f"plotviz error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
