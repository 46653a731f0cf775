"""Lane-width abstraction over the hot batch kernels.

The two flop-dominant kernels (the order-3 gravity interaction kernel and
the Rusanov face flux) can run in two forms selected once per process:

  scalar  width 1, each batch element walked in sequence
  vector  width W in {2, 4, 8, 16}, batches padded to a lane multiple with
          inert entries and executed as wide array operations

Both forms evaluate the same IEEE expressions element by element, so the
mode toggle never changes simulation output beyond roundoff; padding slots
are trimmed before anything downstream can see them.  For accuracy checks
and microbenchmarks this module also carries straight-line per-element
reference implementations (`scalar_reference_*`) written against Python
floats; they are the oracle the lane paths are compared to, and their
timing is what the vector speedup is measured against.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .grid import F_RHO, F_SX, F_SY, F_SZ, F_EGY, N_BASE_FIELDS
from .gravity import m2l_components
from .hydro import rusanov_flux

LANE_WIDTHS = (1, 2, 4, 8, 16)


@dataclass(frozen=True)
class LaneConfig:
    width: int = 1
    mode: str = "scalar"

    def __post_init__(self):
        if self.width not in LANE_WIDTHS:
            raise ConfigError(f"lane width {self.width} not in {LANE_WIDTHS}")
        if self.mode not in ("scalar", "vector"):
            raise ConfigError(f"unknown lane mode {self.mode!r}")
        if (self.width == 1) != (self.mode == "scalar"):
            raise ConfigError("width 1 and mode 'scalar' imply each other")

    @classmethod
    def from_mode(cls, mode, width=8):
        """Process-startup constructor: 'scalar' pins width 1, 'vector'
        takes the requested width."""
        if mode == "scalar":
            return cls(1, "scalar")
        if mode == "vector":
            return cls(width, "vector")
        raise ConfigError(f"unknown lane mode {mode!r}")


@dataclass(frozen=True)
class KernelReport:
    kernel: str
    mode: str
    elements: int
    seconds: float
    deviation: float

    def __post_init__(self):
        if self.elements <= 0:
            raise ConfigError("KernelReport needs elements > 0")
        if self.deviation < 0.0 or not math.isfinite(self.deviation):
            raise ConfigError("KernelReport needs a finite deviation >= 0")

    def csv_row(self):
        return (f"{self.kernel},{self.mode},{self.elements},"
                f"{self.seconds!r},{self.deviation!r}")


def vector_capable():
    """Whether this host can execute the wide lane path.  The vector form
    runs through numpy's array engine, a hard dependency, so the answer is
    static; the hook exists so callers can gate speedup requirements the
    same way they would on hardware without a usable wide unit."""
    return True


# ------------------------------------------------------------------
# lane-dispatched kernels
# ------------------------------------------------------------------

def run_flux_kernel(wl, wr, axis, gamma, lanes):
    """Rusanov flux over a face-state batch under a lane configuration.

    wl, wr: primitives (F, ...); any trailing shape is flattened into the
    batch. Vector widths pad the batch to a lane multiple with a quiescent
    unit state (rho=1, u=0, p=1) and trim the result, so padding is
    unobservable."""
    wl = np.asarray(wl, dtype=float)
    wr = np.asarray(wr, dtype=float)
    if wl.shape != wr.shape:
        raise ConfigError("left/right face batches must share a shape")
    tail = wl.shape[1:]
    nf = wl.shape[0]
    left = wl.reshape(nf, -1)
    right = wr.reshape(nf, -1)
    b = left.shape[1]
    pad = (-b) % lanes.width
    if pad:
        fill = np.zeros((nf, pad))
        fill[F_RHO] = 1.0
        fill[F_EGY] = 1.0
        left = np.concatenate([left, fill], axis=1)
        right = np.concatenate([right, fill], axis=1)
    out = rusanov_flux(left, right, axis, gamma)
    return out[:, :b].reshape((nf,) + tail)


def run_m2l_kernel(dx, dy, dz, m, quad, oct, lanes):
    """Order-3 interaction kernel over a displacement/moment batch under a
    lane configuration.  Padding entries are inert: zero mass and moments
    at unit displacement contribute exactly zero and are trimmed anyway."""
    dx, dy, dz, m = np.broadcast_arrays(
        np.asarray(dx, dtype=float), np.asarray(dy, dtype=float),
        np.asarray(dz, dtype=float), np.asarray(m, dtype=float))
    tail = dx.shape
    quad = np.broadcast_to(np.asarray(quad, dtype=float), (6,) + tail)
    oct = np.broadcast_to(np.asarray(oct, dtype=float), (10,) + tail)
    b = dx.size
    pad = (-b) % lanes.width
    if pad == 0:
        out = m2l_components(dx.reshape(-1), dy.reshape(-1), dz.reshape(-1),
                             m.reshape(-1), quad.reshape(6, -1),
                             oct.reshape(10, -1))
        return out.reshape((20,) + tail)
    one = np.ones(pad)
    zero = np.zeros(pad)
    out = m2l_components(
        np.concatenate([dx.reshape(-1), one]),
        np.concatenate([dy.reshape(-1), zero]),
        np.concatenate([dz.reshape(-1), zero]),
        np.concatenate([m.reshape(-1), zero]),
        np.concatenate([quad.reshape(6, -1), np.zeros((6, pad))], axis=1),
        np.concatenate([oct.reshape(10, -1), np.zeros((10, pad))], axis=1))
    return out[:, :b].reshape((20,) + tail)


def flux_kernel_for(lanes):
    """Adapter with the plain flux-kernel signature the stepper takes."""
    def kernel(wl, wr, axis, gamma):
        return run_flux_kernel(wl, wr, axis, gamma, lanes)
    return kernel


def m2l_kernel_for(lanes):
    """Adapter with the plain interaction-kernel signature the gravity
    solver takes."""
    def kernel(dx, dy, dz, m, quad, oct):
        return run_m2l_kernel(dx, dy, dz, m, quad, oct, lanes)
    return kernel


# ------------------------------------------------------------------
# straight-line scalar references (the oracle and the scalar baseline)
# ------------------------------------------------------------------

def _ref_phys_flux(w, axis, gamma):
    rho = w[F_RHO]
    p = w[F_EGY]
    ua = w[F_SX + axis]
    f = [0.0] * len(w)
    f[F_RHO] = rho * ua
    f[F_SX] = rho * w[F_SX] * ua
    f[F_SY] = rho * w[F_SY] * ua
    f[F_SZ] = rho * w[F_SZ] * ua
    f[F_SX + axis] = f[F_SX + axis] + p
    e_tot = p / (gamma - 1.0) + 0.5 * rho * (
        w[F_SX] * w[F_SX] + w[F_SY] * w[F_SY] + w[F_SZ] * w[F_SZ])
    f[F_EGY] = (e_tot + p) * ua
    for t in range(N_BASE_FIELDS, len(w)):
        f[t] = rho * w[t] * ua
    return f


def _ref_conserved(w, gamma):
    rho = w[F_RHO]
    u = [0.0] * len(w)
    u[F_RHO] = rho
    u[F_SX] = rho * w[F_SX]
    u[F_SY] = rho * w[F_SY]
    u[F_SZ] = rho * w[F_SZ]
    ke = 0.5 * rho * (w[F_SX] * w[F_SX] + w[F_SY] * w[F_SY]
                      + w[F_SZ] * w[F_SZ])
    u[F_EGY] = w[F_EGY] / (gamma - 1.0) + ke
    for t in range(N_BASE_FIELDS, len(w)):
        u[t] = rho * w[t]
    return u


def scalar_reference_flux(wl, wr, axis, gamma):
    """One face at a time in pure Python; same expressions, same order."""
    wl = np.asarray(wl, dtype=float)
    wr = np.asarray(wr, dtype=float)
    tail = wl.shape[1:]
    nf = wl.shape[0]
    left = wl.reshape(nf, -1)
    right = wr.reshape(nf, -1)
    out = np.empty_like(left)
    for j in range(left.shape[1]):
        lw = left[:, j].tolist()
        rw = right[:, j].tolist()
        fl = _ref_phys_flux(lw, axis, gamma)
        fr = _ref_phys_flux(rw, axis, gamma)
        cl = math.sqrt(gamma * lw[F_EGY] / lw[F_RHO])
        cr = math.sqrt(gamma * rw[F_EGY] / rw[F_RHO])
        lam = max(abs(lw[F_SX + axis]) + cl, abs(rw[F_SX + axis]) + cr)
        ul = _ref_conserved(lw, gamma)
        ur = _ref_conserved(rw, gamma)
        for i in range(nf):
            out[i, j] = 0.5 * (fl[i] + fr[i]) - 0.5 * lam * (ur[i] - ul[i])
    return out.reshape((nf,) + tail)


def scalar_reference_m2l(dx, dy, dz, m, quad, oct):
    """One interaction at a time in pure Python; same expressions, same
    contraction order as the batch kernel."""
    dx, dy, dz, m = np.broadcast_arrays(
        np.asarray(dx, dtype=float), np.asarray(dy, dtype=float),
        np.asarray(dz, dtype=float), np.asarray(m, dtype=float))
    tail = dx.shape
    quad = np.broadcast_to(np.asarray(quad, dtype=float), (6,) + tail)
    oct = np.broadcast_to(np.asarray(oct, dtype=float), (10,) + tail)
    xs, ys, zs, ms = (a.reshape(-1) for a in (dx, dy, dz, m))
    qs = quad.reshape(6, -1)
    os_ = oct.reshape(10, -1)
    out = np.empty((20, xs.size))
    quad_mult = (1, 2, 2, 1, 2, 1)
    oct_mult = (1, 3, 3, 3, 6, 3, 1, 3, 3, 1)
    for j in range(xs.size):
        x, y, z, mm = xs[j], ys[j], zs[j], ms[j]
        q = qs[:, j].tolist()
        o = os_[:, j].tolist()
        r2 = x * x + y * y + z * z
        ir = 1.0 / math.sqrt(r2)
        ir2 = ir * ir
        ir3 = ir * ir2
        ir5 = ir3 * ir2
        ir7 = ir5 * ir2
        d1x, d1y, d1z = -x * ir3, -y * ir3, -z * ir3
        d2 = (3.0 * x * x * ir5 - ir3, 3.0 * x * y * ir5, 3.0 * x * z * ir5,
              3.0 * y * y * ir5 - ir3, 3.0 * y * z * ir5,
              3.0 * z * z * ir5 - ir3)
        d3 = (-15.0 * x * x * x * ir7 + 9.0 * x * ir5,
              -15.0 * x * x * y * ir7 + 3.0 * y * ir5,
              -15.0 * x * x * z * ir7 + 3.0 * z * ir5,
              -15.0 * x * y * y * ir7 + 3.0 * x * ir5,
              -15.0 * x * y * z * ir7,
              -15.0 * x * z * z * ir7 + 3.0 * x * ir5,
              -15.0 * y * y * y * ir7 + 9.0 * y * ir5,
              -15.0 * y * y * z * ir7 + 3.0 * z * ir5,
              -15.0 * y * z * z * ir7 + 3.0 * y * ir5,
              -15.0 * z * z * z * ir7 + 9.0 * z * ir5)
        qd2 = sum(quad_mult[p] * q[p] * d2[p] for p in range(6))
        od3 = sum(oct_mult[p] * o[p] * d3[p] for p in range(10))
        qd3x = (q[0] * d3[0] + 2 * q[1] * d3[1] + 2 * q[2] * d3[2]
                + q[3] * d3[3] + 2 * q[4] * d3[4] + q[5] * d3[5])
        qd3y = (q[0] * d3[1] + 2 * q[1] * d3[3] + 2 * q[2] * d3[4]
                + q[3] * d3[6] + 2 * q[4] * d3[7] + q[5] * d3[8])
        qd3z = (q[0] * d3[2] + 2 * q[1] * d3[4] + 2 * q[2] * d3[5]
                + q[3] * d3[7] + 2 * q[4] * d3[8] + q[5] * d3[9])
        out[0, j] = -(mm * ir + 0.5 * qd2 - (1.0 / 6.0) * od3)
        out[1, j] = -(mm * d1x + 0.5 * qd3x)
        out[2, j] = -(mm * d1y + 0.5 * qd3y)
        out[3, j] = -(mm * d1z + 0.5 * qd3z)
        for p in range(6):
            out[4 + p, j] = -mm * d2[p]
        for p in range(10):
            out[10 + p, j] = -mm * d3[p]
    return out.reshape((20,) + tail)


# ------------------------------------------------------------------
# microbenchmark
# ------------------------------------------------------------------

def max_relative_deviation(got, ref):
    """max over elements of |got-ref| / max(|got|, |ref|), 0 where both
    vanish."""
    got = np.asarray(got, dtype=float)
    ref = np.asarray(ref, dtype=float)
    denom = np.maximum(np.abs(got), np.abs(ref))
    diff = np.abs(got - ref)
    out = np.zeros_like(diff)
    np.divide(diff, denom, out=out, where=denom > 0.0)
    return float(out.max(initial=0.0))


def random_flux_batch(rng, size, n_tracers=0):
    """(wl, wr) primitives with positive density and pressure."""
    nf = N_BASE_FIELDS + n_tracers
    wl = np.empty((nf, size))
    wr = np.empty((nf, size))
    for w in (wl, wr):
        w[F_RHO] = rng.uniform(0.05, 4.0, size)
        w[F_SX:F_SZ + 1] = rng.normal(0.0, 1.5, (3, size))
        w[F_EGY] = rng.uniform(0.02, 5.0, size)
        for t in range(N_BASE_FIELDS, nf):
            w[t] = rng.uniform(0.0, 1.0, size)
    return wl, wr


def random_m2l_batch(rng, size):
    """(dx, dy, dz, m, quad, oct) with separations bounded away from zero."""
    d = rng.normal(0.0, 1.0, (3, size))
    r = np.sqrt(np.sum(d * d, axis=0))
    d *= (1.0 + rng.uniform(0.0, 3.0, size)) / r    # |d| in [1, 4)
    m = rng.uniform(0.0, 2.0, size)
    quad = rng.normal(0.0, 0.05, (6, size))
    oct = rng.normal(0.0, 0.01, (10, size))
    return d[0], d[1], d[2], m, quad, oct


_MICROBENCH_WIDTH = 16


def simd_microbench(kernel, sizes, seed=0):
    """Time the scalar reference and the widest vector lane path over the
    same random batches; two KernelReport rows per size.  The deviation on
    each vector row is measured against the scalar run it is paired with."""
    if kernel not in ("flux", "m2l"):
        raise ConfigError(f"unknown microbench kernel {kernel!r}")
    sizes = list(sizes)
    if not sizes:
        raise ConfigError("microbench needs at least one size")
    for s in sizes:
        if int(s) != s or s < 1:
            raise ConfigError(f"microbench size {s!r} must be a positive integer")
    rng = np.random.default_rng(seed)
    lanes = LaneConfig(_MICROBENCH_WIDTH, "vector")
    reports = []
    for size in sizes:
        size = int(size)
        if kernel == "flux":
            wl, wr = random_flux_batch(rng, size)
            def ref_run():
                return scalar_reference_flux(wl, wr, 0, 5.0 / 3.0)
            def lane_run():
                return run_flux_kernel(wl, wr, 0, 5.0 / 3.0, lanes)
        else:
            batch = random_m2l_batch(rng, size)
            def ref_run():
                return scalar_reference_m2l(*batch)
            def lane_run():
                return run_m2l_kernel(*batch, lanes)
        ref_run(), lane_run()                        # warm both paths
        t0 = time.perf_counter()
        ref = ref_run()
        t_scalar = time.perf_counter() - t0
        t0 = time.perf_counter()
        got = lane_run()
        t_vector = time.perf_counter() - t0
        dev = max_relative_deviation(got, ref)
        reports.append(KernelReport(kernel, "scalar", size, t_scalar, 0.0))
        reports.append(KernelReport(kernel, "vector", size, t_vector, dev))
    return reports


MICROBENCH_CSV_HEADER = "kernel,mode,elements,seconds,deviation"
