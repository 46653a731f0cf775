"""Command-line front end.

Subcommands: run (one benchmark), sweep (cartesian settings grid), oracle
(direct-sum gravity on a point list), microbench (SIMD kernel timing).
Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

import argparse
import itertools
import sys

from . import bench
from . import grid as grid_mod
from . import gravity
from . import simd
from .errors import ConfigError, SolverFailure
from .scenarios import KINDS, PRESETS, ScenarioConfig, preset_config


def _build_parser():
    p = argparse.ArgumentParser(
        prog="octomini",
        description="AMR self-gravitating hydro benchmark harness")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario and report throughput")
    _scenario_flags(run)
    _settings_flags(run, lists=False)
    run.add_argument("--csv", help="append the benchmark row to this file")
    run.add_argument("--diag-csv", help="write per-step diagnostics here")
    run.add_argument("--snapshot", help="write the final state here")

    sw = sub.add_parser("sweep", help="run a grid of engine/comm settings")
    _scenario_flags(sw)
    _settings_flags(sw, lists=True)
    sw.add_argument("--csv", required=True, help="output CSV path")
    sw.add_argument("--diag-csv", help="write per-step diagnostics here")

    orc = sub.add_parser(
        "oracle",
        help="direct-sum gravity: read 'm x y z' lines, print phi gx gy gz")
    orc.add_argument("points", nargs="?",
                     help="input file (default: stdin)")

    mb = sub.add_parser("microbench", help="SIMD kernel timing rows")
    mb.add_argument("--kernel", choices=("flux", "m2l", "both"),
                    default="both")
    mb.add_argument("--sizes", default="4096,16384,65536",
                    help="comma-separated batch sizes")
    mb.add_argument("--seed", type=int, default=0)
    mb.add_argument("--csv", help="write rows here instead of stdout")
    return p


def _scenario_flags(p):
    p.add_argument("--scenario", default=None,
                   help=f"one of {'/'.join(KINDS)} or a preset "
                        f"({', '.join(PRESETS)}); default sod")
    p.add_argument("--max-level", type=int, default=None)
    p.add_argument("--n-edge", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", help="flat key = value settings file")


def _settings_flags(p, lists):
    if lists:
        p.add_argument("--workers", default="1",
                       help="comma-separated list, e.g. 1,2,4")
        p.add_argument("--localities", default="1")
        p.add_argument("--comm-opt", default="off",
                       help="comma-separated on/off list")
        p.add_argument("--simd", default="scalar",
                       help="comma-separated scalar/vector list")
        p.add_argument("--multipole-tasks", default="1")
    else:
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--localities", type=int, default=1)
        p.add_argument("--comm-opt", choices=("on", "off"), default="off")
        p.add_argument("--simd", choices=("scalar", "vector"),
                       default="scalar")
        p.add_argument("--multipole-tasks", type=int, default=1)


def parse_config_file(path):
    """Flat `key = value` lines; # starts a comment; blank lines ignored."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, "
                                  f"got {raw.strip()!r}")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


_INT_KEYS = {"max_level", "n_edge", "steps", "seed", "cell_budget"}
_FLOAT_KEYS = {"omega", "mass_ratio", "separation", "rho_central",
               "star_radius", "ambient", "gamma", "density_ref", "grad_ref",
               "domain_size"}


def _coerce(key, value):
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"config key {key}: {exc}") from exc
    if key == "kind" or key == "scenario":
        return value
    raise ConfigError(f"unknown config key {key!r}")


def _scenario_from_args(args):
    overrides = {}
    if args.config:
        for key, value in parse_config_file(args.config).items():
            if key in ("kind", "scenario"):
                overrides["__name__"] = value
            else:
                overrides[key] = _coerce(key, value)
    name = overrides.pop("__name__", None)
    # command line wins over the config file
    if args.scenario is not None:
        name = args.scenario
    elif name is None:
        name = "sod"
    for key, flag in (("max_level", args.max_level),
                      ("n_edge", args.n_edge),
                      ("steps", args.steps),
                      ("seed", args.seed)):
        if flag is not None:
            overrides[key] = flag
    if name in PRESETS:
        return preset_config(name, **overrides)
    if name not in KINDS:
        raise ConfigError(f"unknown scenario {name!r}; expected one of "
                          f"{KINDS} or a preset {tuple(PRESETS)}")
    return ScenarioConfig(kind=name, **overrides)


def _cmd_run(args):
    config = _scenario_from_args(args)
    settings = bench.RunSettings(
        workers=args.workers, localities=args.localities,
        comm_opt=args.comm_opt == "on", simd=args.simd,
        multipole_tasks=args.multipole_tasks)
    result, tree = bench.run_benchmark(config, settings)
    rec = result.record
    print(f"scenario={rec.scenario} leaves={rec.leaves} cells={rec.cells} "
          f"steps={rec.steps}")
    print(f"wall_s={rec.wall_s:.6f} cells_per_s={rec.cells_per_s:.1f}")
    print(f"digest={result.final_digest}")
    if args.csv:
        bench.write_bench_csv(args.csv, [rec], append=True)
    if args.diag_csv:
        bench.write_diag_csv(args.diag_csv,
                             [(settings, d) for d in result.diagnostics])
    if args.snapshot:
        grid_mod.write_snapshot(tree, args.snapshot)
    return 0


def _parse_list(text, kind, flag):
    vals = []
    for part in text.split(","):
        part = part.strip()
        try:
            if kind == "int":
                vals.append(int(part))
            else:
                if part not in ("on", "off", "scalar", "vector"):
                    raise ValueError(part)
                vals.append(part)
        except ValueError as exc:
            raise ConfigError(f"--{flag}: bad entry {part!r}") from exc
    return vals


def _cmd_sweep(args):
    config = _scenario_from_args(args)
    workers = _parse_list(args.workers, "int", "workers")
    localities = _parse_list(args.localities, "int", "localities")
    comm = _parse_list(args.comm_opt, "str", "comm-opt")
    simds = _parse_list(args.simd, "str", "simd")
    tasks = _parse_list(args.multipole_tasks, "int", "multipole-tasks")
    # cartesian product, slowest-varying first: workers, localities,
    # comm_opt, simd, multipole_tasks
    grid = [bench.RunSettings(workers=w, localities=loc, comm_opt=c == "on",
                              simd=s, multipole_tasks=t)
            for w, loc, c, s, t in itertools.product(
                workers, localities, comm, simds, tasks)]
    records = bench.sweep(config, grid, args.csv, args.diag_csv)
    print(f"{len(records)} rows -> {args.csv}")
    return 0


def _cmd_oracle(args):
    if args.points:
        fh = open(args.points)
    else:
        fh = sys.stdin
    masses = []
    points = []
    try:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ConfigError(f"line {lineno}: expected 'm x y z', "
                                  f"got {raw.strip()!r}")
            try:
                vals = [float(v) for v in parts]
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: {exc}") from exc
            masses.append(vals[0])
            points.append(vals[1:])
    finally:
        if fh is not sys.stdin:
            fh.close()
    if not masses:
        raise ConfigError("oracle: no input points")
    import numpy as np
    phi, g = gravity.direct_sum_oracle(np.asarray(masses),
                                       np.asarray(points))
    for i in range(len(masses)):
        print(f"{float(phi[i])!r} {float(g[i, 0])!r} "
              f"{float(g[i, 1])!r} {float(g[i, 2])!r}")
    return 0


def _cmd_microbench(args):
    sizes = _parse_list(args.sizes, "int", "sizes")
    kernels = ("flux", "m2l") if args.kernel == "both" else (args.kernel,)
    rows = []
    for kernel in kernels:
        rows.extend(simd.simd_microbench(kernel, sizes, seed=args.seed))
    lines = [simd.MICROBENCH_CSV_HEADER] + [
        f"{r.kernel},{r.mode},{r.elements},{r.seconds!r},{r.deviation!r}"
        for r in rows]
    text = "\n".join(lines) + "\n"
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


_COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "oracle": _cmd_oracle,
             "microbench": _cmd_microbench}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
