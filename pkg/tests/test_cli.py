"""Command-line interface tests, mostly in-process via main(argv)."""

import subprocess
import sys

import numpy as np
import pytest

from octomini import bench as B
from octomini import cli
from octomini import grid as G
from octomini import gravity as GR


RUN_FAST = ["run", "--scenario", "sod", "--max-level", "1",
            "--n-edge", "8", "--steps", "2"]


def test_run_prints_summary_and_digest(capsys):
    assert cli.main(RUN_FAST) == 0
    out = capsys.readouterr().out
    assert "scenario=sod" in out
    assert "cells_per_s=" in out
    digest_lines = [l for l in out.splitlines() if l.startswith("digest=")]
    assert len(digest_lines) == 1
    assert len(digest_lines[0].split("=", 1)[1]) == 64


def test_run_appends_csv(tmp_path, capsys):
    path = tmp_path / "out.csv"
    assert cli.main(RUN_FAST + ["--csv", str(path)]) == 0
    assert cli.main(RUN_FAST + ["--csv", str(path)]) == 0
    capsys.readouterr()
    rows = B.parse_bench_csv(path)
    assert len(rows) == 2
    assert all(r["scenario"] == "sod" for r in rows)


def test_run_writes_snapshot(tmp_path, capsys):
    import hashlib
    import struct

    path = tmp_path / "state.snap"
    assert cli.main(RUN_FAST + ["--snapshot", str(path)]) == 0
    out = capsys.readouterr().out
    digest = [l for l in out.splitlines()
              if l.startswith("digest=")][0].split("=", 1)[1]
    n_edge, max_level, leaves = G.read_snapshot(path)
    assert n_edge == 8 and max_level == 1
    # the snapshot carries the exact final state: re-hashing it reproduces
    # the digest the run printed
    h = hashlib.sha256()
    for leaf in leaves:
        h.update(struct.pack("<q", leaf.level))
        h.update(struct.pack("<3q", *leaf.index))
        h.update(np.ascontiguousarray(leaf.cells)
                 .astype("<f8", copy=False).tobytes())
    assert h.hexdigest() == digest


def test_run_diag_csv(tmp_path, capsys):
    path = tmp_path / "diag.csv"
    assert cli.main(RUN_FAST + ["--diag-csv", str(path)]) == 0
    capsys.readouterr()
    lines = open(path).read().splitlines()
    assert lines[0] == "settings," + B.DIAG_HEADER
    assert len(lines) == 3


def test_unknown_scenario_exit_code(capsys):
    assert cli.main(["run", "--scenario", "nosuch"]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "# benchmark setup\n"
        "scenario = sod\n"
        "max_level = 1\n"
        "n_edge = 8\n"
        "steps = 4\n")
    assert cli.main(["run", "--config", str(cfg)]) == 0
    assert "steps=4" in capsys.readouterr().out
    # the command line wins over the file
    assert cli.main(["run", "--config", str(cfg), "--steps", "2"]) == 0
    assert "steps=2" in capsys.readouterr().out


def test_config_file_rejects_garbage(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("steps 4\n")
    assert cli.main(["run", "--config", str(cfg)]) == 2
    cfg.write_text("nosuchkey = 1\n")
    assert cli.main(["run", "--config", str(cfg)]) == 2
    capsys.readouterr()


def test_sweep_cartesian_order(tmp_path, capsys):
    path = tmp_path / "sweep.csv"
    argv = ["sweep", "--scenario", "sod", "--max-level", "1",
            "--n-edge", "8", "--steps", "1", "--workers", "1,2",
            "--simd", "scalar,vector", "--csv", str(path)]
    assert cli.main(argv) == 0
    capsys.readouterr()
    rows = B.parse_bench_csv(path)
    got = [(r["workers"], r["simd"]) for r in rows]
    # workers vary slowest, then localities, comm_opt, simd, tasks
    assert got == [(1, "scalar"), (1, "vector"),
                   (2, "scalar"), (2, "vector")]


def test_oracle_matches_library(tmp_path, capsys):
    pts = tmp_path / "pts.txt"
    pts.write_text("1.0 0.1 0.2 0.3\n"
                   "2.0 0.8 0.7 0.6\n"
                   "0.5 0.4 0.5 0.9\n")
    assert cli.main(["oracle", str(pts)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 3
    masses = np.array([1.0, 2.0, 0.5])
    pos = np.array([[0.1, 0.2, 0.3], [0.8, 0.7, 0.6], [0.4, 0.5, 0.9]])
    phi, g = GR.direct_sum_oracle(masses, pos)
    for i, line in enumerate(out):
        vals = [float(v) for v in line.split()]
        assert vals[0] == phi[i]
        assert vals[1:] == list(g[i])


def test_oracle_rejects_malformed(tmp_path, capsys):
    pts = tmp_path / "pts.txt"
    pts.write_text("1.0 0.1 0.2\n")
    assert cli.main(["oracle", str(pts)]) == 2
    pts.write_text("")
    assert cli.main(["oracle", str(pts)]) == 2
    capsys.readouterr()


def test_microbench_rows(tmp_path, capsys):
    path = tmp_path / "micro.csv"
    assert cli.main(["microbench", "--kernel", "flux",
                     "--sizes", "512,2048", "--csv", str(path)]) == 0
    capsys.readouterr()
    lines = open(path).read().splitlines()
    assert lines[0] == "kernel,mode,elements,seconds,deviation"
    assert len(lines) == 5   # scalar+vector rows per size
    for line in lines[1:]:
        kernel, mode, elements, seconds, deviation = line.split(",")
        assert kernel == "flux"
        assert mode in ("scalar", "vector")
        assert float(deviation) <= 1e-13


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "octomini.cli"] + RUN_FAST,
        capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert "digest=" in proc.stdout
