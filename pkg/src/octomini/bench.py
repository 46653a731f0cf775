"""Step orchestration and throughput accounting.

A full step is: ghost exchange (inside each RK stage), one gravity solve,
one RK3 hydro update.  The benchmark clock wraps the step loop only, and
the headline number is processed cells per second:
cells * steps / wall_seconds.
"""

import csv as _csv
import hashlib
import io
import logging
import math
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import comm as comm_mod
from . import gravity as gravity_mod
from . import hydro as hydro_mod
from .engine import EngineConfig, SplitPolicy, TaskEngine
from .errors import ConfigError, SolverFailure
from .simd import LaneConfig, flux_kernel_for, m2l_kernel_for
from .scenarios import build_scenario_tree, make_step_params

log = logging.getLogger(__name__)

CSV_HEADER = ("scenario,localities,workers,simd,comm_opt,multipole_tasks,"
              "leaves,cells,steps,wall_s,cells_per_s")

DIAG_HEADER = ("step,time,dt,mass,px,py,pz,lx,ly,lz,kinetic,internal,"
               "potential,tracers,digest")


def cells_per_second(cells, steps, wall_s):
    if wall_s <= 0.0:
        raise ConfigError("wall_s must be positive")
    return cells * steps / wall_s


@dataclass(frozen=True)
class RunSettings:
    workers: int = 1
    localities: int = 1
    comm_opt: bool = False
    simd: str = "scalar"
    simd_width: int = 8
    multipole_tasks: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.multipole_tasks < 1:
            raise ConfigError("multipole_tasks must be >= 1")


@dataclass(frozen=True)
class BenchRecord:
    scenario: str
    localities: int
    workers: int
    simd: str
    comm_opt: int
    multipole_tasks: int
    leaves: int
    cells: int
    steps: int
    wall_s: float
    cells_per_s: float

    def csv_row(self):
        return (f"{self.scenario},{self.localities},{self.workers},"
                f"{self.simd},{self.comm_opt},{self.multipole_tasks},"
                f"{self.leaves},{self.cells},{self.steps},"
                f"{self.wall_s!r},{self.cells_per_s!r}")


def parse_bench_csv(path):
    """Rows of the benchmark CSV as dicts with numeric fields converted."""
    out = []
    with open(path, newline="") as fh:
        reader = _csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER.split(","):
            raise ConfigError(f"unexpected CSV header in {path}: "
                              f"{reader.fieldnames}")
        for row in reader:
            for key in ("localities", "workers", "comm_opt",
                        "multipole_tasks", "leaves", "cells", "steps"):
                row[key] = int(row[key])
            row["wall_s"] = float(row["wall_s"])
            row["cells_per_s"] = float(row["cells_per_s"])
            out.append(row)
    return out


def state_digest(tree):
    """Order-fixed digest of the full conserved state: leaves in their
    deterministic traversal order, little-endian payloads."""
    h = hashlib.sha256()
    for leaf in tree.leaves():
        h.update(struct.pack("<q", leaf.level))
        h.update(struct.pack("<3q", *leaf.index))
        h.update(np.ascontiguousarray(leaf.grid.cells)
                 .astype("<f8", copy=False).tobytes())
    return h.hexdigest()


@dataclass
class StepDiagnostics:
    step: int
    time: float
    dt: float
    totals: "hydro_mod.Totals"
    digest: str

    def csv_row(self):
        # repr of a python float round-trips exactly; numpy scalars do not
        t = self.totals
        tracers = ";".join(repr(float(v)) for v in t.tracer_mass)
        vals = [t.mass, t.momentum[0], t.momentum[1], t.momentum[2],
                t.angular_momentum[0], t.angular_momentum[1],
                t.angular_momentum[2], t.kinetic, t.internal, t.potential]
        body = ",".join(repr(float(v)) for v in vals)
        return (f"{self.step},{self.time!r},{self.dt!r},{body},"
                f"{tracers},{self.digest}")


@dataclass
class RunResult:
    record: BenchRecord
    diagnostics: list = field(default_factory=list)

    @property
    def final_digest(self):
        return self.diagnostics[-1].digest if self.diagnostics else None


def _step_machinery(tree, settings):
    lanes = (LaneConfig() if settings.simd == "scalar"
             else LaneConfig.from_mode(settings.simd, settings.simd_width))
    flux_kernel = flux_kernel_for(lanes)
    m2l_kernel = m2l_kernel_for(lanes)
    ccfg = comm_mod.CommConfig(settings.localities,
                               local_opt=settings.comm_opt)
    dmap = comm_mod.partition(tree, settings.localities)
    fabric = comm_mod.CommFabric(ccfg)
    exchange_fn = comm_mod.make_exchange_fn(dmap, ccfg, fabric)
    policy = SplitPolicy(tasks_per_kernel=settings.multipole_tasks)
    return flux_kernel, m2l_kernel, exchange_fn, fabric, policy


def run_benchmark(config, settings=RunSettings(), collect_diagnostics=True):
    """Build the scenario, run config.steps full steps, return the CSV
    record plus per-step diagnostics rows."""
    tree = build_scenario_tree(config)
    params = make_step_params(config)
    flux_kernel, m2l_kernel, exchange_fn, fabric, policy = \
        _step_machinery(tree, settings)
    leaves = len(tree.leaves())
    cells = leaves * config.n_edge ** 3
    diags = []
    t_now = 0.0

    with TaskEngine(EngineConfig(workers=settings.workers)) as engine:
        wall0 = time.perf_counter()
        for step in range(config.steps):
            try:
                dt = hydro_mod.compute_dt(tree, params.cfl, params.gamma)
                if params.use_gravity:
                    gravity_mod.solve_gravity(tree, engine=engine,
                                              policy=policy,
                                              kernel=m2l_kernel)
                hydro_mod.rk3_step(tree, dt, params, exchange_fn,
                                   flux_kernel=flux_kernel, engine=engine)
            except SolverFailure as exc:
                raise SolverFailure(
                    f"step {step}: {exc} [state digest "
                    f"{state_digest(tree)}]") from exc
            t_now += dt
            if collect_diagnostics:
                totals = hydro_mod.diagnostics(tree, params.gamma,
                                               params.frame_center)
                diags.append(StepDiagnostics(step, t_now, dt, totals,
                                             state_digest(tree)))
        wall = time.perf_counter() - wall0

    record = BenchRecord(
        scenario=config.kind, localities=settings.localities,
        workers=settings.workers, simd=settings.simd,
        comm_opt=int(settings.comm_opt),
        multipole_tasks=settings.multipole_tasks, leaves=leaves,
        cells=cells, steps=config.steps, wall_s=wall,
        cells_per_s=cells_per_second(cells, config.steps, wall))
    return RunResult(record=record, diagnostics=diags), tree


def _failed_record(config, settings):
    return BenchRecord(
        scenario=config.kind, localities=settings.localities,
        workers=settings.workers, simd=settings.simd,
        comm_opt=int(settings.comm_opt),
        multipole_tasks=settings.multipole_tasks, leaves=0, cells=0,
        steps=config.steps, wall_s=math.nan, cells_per_s=math.nan)


def sweep(config, settings_list, csv_path, diag_path=None):
    """One benchmark row per settings tuple, in the given order.  A failing
    run is recorded as a row with NaN timings and the sweep continues."""
    records = []
    diag_rows = []
    for settings in settings_list:
        try:
            result, _tree = run_benchmark(config, settings)
            records.append(result.record)
            diag_rows.extend(
                (settings, d) for d in result.diagnostics)
        except (SolverFailure, ConfigError) as exc:
            log.error("sweep entry %s failed: %s", settings, exc)
            records.append(_failed_record(config, settings))
    write_bench_csv(csv_path, records)
    if diag_path is not None:
        write_diag_csv(diag_path, diag_rows)
    return records


def write_bench_csv(path, records, append=False):
    mode = "a" if append else "w"
    out = io.StringIO()
    if not append or not _has_header(path):
        out.write(CSV_HEADER + "\n")
    for rec in records:
        out.write(rec.csv_row() + "\n")
    with open(path, mode) as fh:
        fh.write(out.getvalue())


def _has_header(path):
    try:
        with open(path) as fh:
            return fh.readline().strip() == CSV_HEADER
    except FileNotFoundError:
        return False


def write_diag_csv(path, settings_diag_pairs):
    with open(path, "w") as fh:
        fh.write("settings," + DIAG_HEADER + "\n")
        for settings, diag in settings_diag_pairs:
            tag = (f"w{settings.workers}-L{settings.localities}-"
                   f"{settings.simd}-c{int(settings.comm_opt)}-"
                   f"T{settings.multipole_tasks}")
            fh.write(f"{tag},{diag.csv_row()}\n")
