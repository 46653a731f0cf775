"""Finite-volume compressible Euler solver on the octree.

Scheme: minmod-limited piecewise-linear reconstruction in primitive
variables, Rusanov (local Lax-Friedrichs) fluxes, SSP-RK3 with one global dt.
Self-gravity and rotating-frame terms enter as stage-wise sources. Coarse
faces adjacent to finer leaves adopt the area-mean of the covering fine
fluxes before the divergence is taken, so conserved totals telescope across
resolution jumps.

Array convention: everything field-major, (F, nx, ny, nz); axis k of space is
array axis 1+k. A "pencil" (F, nx) works in every kernel here by the same
convention, which is how the 1D Sod driver reuses the exact same code paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SolverFailure
from .grid import (F_RHO, F_SX, F_SY, F_SZ, F_EGY, N_BASE_FIELDS, GHOST,
                   SameLevel, Coarser, DomainBoundary, face_neighbor,
                   restrict_block)

# SSP-RK3 in incremental form: u <- u + a*(u0 - u) + b*dt*R(u).
# Incremental (rather than convex-sum) form makes a zero-RHS stage an exact
# bitwise no-op.
RK3_STAGES = ((0.0, 1.0), (0.75, 0.25), (1.0 / 3.0, 2.0 / 3.0))


# ------------------------------------------------------------------
# state conversions
# ------------------------------------------------------------------

def primitives(cells, gamma):
    """Conserved (F,...) -> primitive (F,...): rho, ux, uy, uz, p, tracer
    fractions. Pressure is clamped at zero (sound-speed guard only; floors
    proper are applied by the stepper and counted)."""
    w = np.empty_like(cells)
    rho = cells[F_RHO]
    w[F_RHO] = rho
    inv = 1.0 / rho
    w[F_SX] = cells[F_SX] * inv
    w[F_SY] = cells[F_SY] * inv
    w[F_SZ] = cells[F_SZ] * inv
    ke = 0.5 * rho * (w[F_SX] ** 2 + w[F_SY] ** 2 + w[F_SZ] ** 2)
    w[F_EGY] = np.maximum((gamma - 1.0) * (cells[F_EGY] - ke), 0.0)
    for t in range(N_BASE_FIELDS, cells.shape[0]):
        w[t] = cells[t] * inv
    return w


def conserved(w, gamma):
    u = np.empty_like(w)
    rho = w[F_RHO]
    u[F_RHO] = rho
    u[F_SX] = rho * w[F_SX]
    u[F_SY] = rho * w[F_SY]
    u[F_SZ] = rho * w[F_SZ]
    ke = 0.5 * rho * (w[F_SX] ** 2 + w[F_SY] ** 2 + w[F_SZ] ** 2)
    u[F_EGY] = w[F_EGY] / (gamma - 1.0) + ke
    for t in range(N_BASE_FIELDS, w.shape[0]):
        u[t] = rho * w[t]
    return u


# ------------------------------------------------------------------
# reconstruction
# ------------------------------------------------------------------

def minmod(a, b):
    return np.where(a * b <= 0.0, 0.0, np.where(np.abs(a) < np.abs(b), a, b))


def reconstruct(w_pad, arr_axis):
    """Limited linear face states along one array axis.

    w_pad holds primitives with GHOST cells on both ends of arr_axis
    (extent n + 2*GHOST). Returns (w_left, w_right, engaged): face states at
    the n+1 block faces, and a per-field boolean over the n interior cells
    marking where the limiter clipped a materially nonzero slope (pure FP
    noise on a constant field does not count as engagement).
    """
    g = GHOST
    n = w_pad.shape[arr_axis] - 2 * g

    def sl(lo, hi):
        s = [slice(None)] * w_pad.ndim
        s[arr_axis] = slice(lo, hi)
        return tuple(s)

    # slopes for cells g-1 .. g+n (the ones adjacent to any block face)
    w = w_pad[sl(g - 2, g + n + 2)]
    d_lo = w[sl(1, n + 3)] - w[sl(0, n + 2)]
    d_hi = w[sl(2, n + 4)] - w[sl(1, n + 3)]
    slope = minmod(d_lo, d_hi)
    cells = w[sl(1, n + 3)]
    w_left = cells[sl(0, n + 1)] + 0.5 * slope[sl(0, n + 1)]
    w_right = cells[sl(1, n + 2)] - 0.5 * slope[sl(1, n + 2)]
    material = np.maximum(np.abs(d_lo), np.abs(d_hi)) > 1e-13 * np.abs(cells)
    engaged = ((d_lo * d_hi <= 0.0) & material)[sl(1, n + 1)]
    return w_left, w_right, engaged


# ------------------------------------------------------------------
# fluxes
# ------------------------------------------------------------------

def phys_flux(w, axis, gamma):
    """Physical Euler flux of primitive states along spatial axis 0/1/2."""
    f = np.empty_like(w)
    rho, p = w[F_RHO], w[F_EGY]
    ua = w[F_SX + axis]
    f[F_RHO] = rho * ua
    f[F_SX] = rho * w[F_SX] * ua
    f[F_SY] = rho * w[F_SY] * ua
    f[F_SZ] = rho * w[F_SZ] * ua
    f[F_SX + axis] = f[F_SX + axis] + p
    e_tot = p / (gamma - 1.0) + 0.5 * rho * (w[F_SX] ** 2 + w[F_SY] ** 2 + w[F_SZ] ** 2)
    f[F_EGY] = (e_tot + p) * ua
    for t in range(N_BASE_FIELDS, w.shape[0]):
        f[t] = rho * w[t] * ua
    return f


def rusanov_flux(wl, wr, axis, gamma):
    """Rusanov flux from left/right primitive states; identical states give
    the physical flux bitwise."""
    if not (np.all(np.isfinite(wl)) and np.all(np.isfinite(wr))):
        raise SolverFailure("non-finite face states in flux evaluation")
    fl = phys_flux(wl, axis, gamma)
    fr = phys_flux(wr, axis, gamma)
    cl = np.sqrt(gamma * wl[F_EGY] / wl[F_RHO])
    cr = np.sqrt(gamma * wr[F_EGY] / wr[F_RHO])
    lam = np.maximum(np.abs(wl[F_SX + axis]) + cl, np.abs(wr[F_SX + axis]) + cr)
    ul = conserved(wl, gamma)
    ur = conserved(wr, gamma)
    return 0.5 * (fl + fr) - 0.5 * lam * (ur - ul)


# ------------------------------------------------------------------
# time step
# ------------------------------------------------------------------

def max_signal_speed(cells, gamma):
    """max over cells of (max_axis |u_a| + c)."""
    rho = cells[F_RHO]
    if np.any(rho <= 0.0) or not np.all(np.isfinite(cells)):
        raise SolverFailure("vacuum or non-finite state in dt computation")
    umax = np.max(np.abs(cells[F_SX:F_SZ + 1]), axis=0) / rho
    ke = 0.5 * (cells[F_SX] ** 2 + cells[F_SY] ** 2 + cells[F_SZ] ** 2) / rho
    p = np.maximum((gamma - 1.0) * (cells[F_EGY] - ke), 0.0)
    c = np.sqrt(gamma * p / rho)
    return float(np.max(umax + c))


def compute_dt(tree, cfl, gamma):
    """Global dt = cfl * min over all cells of h / (|u|_max + c)."""
    dt = math.inf
    for leaf in tree.leaves():
        s = max_signal_speed(leaf.grid.cells, gamma)
        if s > 0.0:
            dt = min(dt, leaf.grid.cell_width / s)
    if not math.isfinite(dt):
        raise SolverFailure("no finite wave speed anywhere; cannot pick dt")
    return cfl * dt


# ------------------------------------------------------------------
# sources
# ------------------------------------------------------------------

def rotating_frame_sources(cells, centers, omega, frame_center):
    """Momentum/energy source rates for a frame rotating at omega about z
    through frame_center: Coriolis -2 Omega x s (workless) and centrifugal
    rho Omega^2 r_perp with its work rate s . Omega^2 r_perp."""
    rhs = np.zeros_like(cells)
    if omega == 0.0:
        return rhs
    rx = centers[0] - frame_center[0]
    ry = centers[1] - frame_center[1]
    w2 = omega * omega
    sx, sy = cells[F_SX], cells[F_SY]
    rhs[F_SX] = 2.0 * omega * sy + cells[F_RHO] * w2 * rx
    rhs[F_SY] = -2.0 * omega * sx + cells[F_RHO] * w2 * ry
    rhs[F_EGY] = w2 * (sx * rx + sy * ry)
    return rhs


def gravity_source_rate(cells, g):
    """Source rates for acceleration field g (3, n, n, n)."""
    rhs = np.zeros_like(cells)
    rho = cells[F_RHO]
    rhs[F_SX] = rho * g[0]
    rhs[F_SY] = rho * g[1]
    rhs[F_SZ] = rho * g[2]
    rhs[F_EGY] = cells[F_SX] * g[0] + cells[F_SY] * g[1] + cells[F_SZ] * g[2]
    return rhs


def couple_gravity(cells, g, dt_stage):
    """Direct momentum/energy kick: s += rho g dt, E += s . g dt (pre-kick s)."""
    de = (cells[F_SX] * g[0] + cells[F_SY] * g[1] + cells[F_SZ] * g[2]) * dt_stage
    rho = cells[F_RHO]
    cells[F_SX] += rho * g[0] * dt_stage
    cells[F_SY] += rho * g[1] * dt_stage
    cells[F_SZ] += rho * g[2] * dt_stage
    cells[F_EGY] += de


# ------------------------------------------------------------------
# step orchestration
# ------------------------------------------------------------------

@dataclass
class StepParams:
    gamma: float = 5.0 / 3.0
    cfl: float = 0.4
    omega: float = 0.0
    frame_center: tuple = (0.5, 0.5, 0.5)
    density_floor: float = 0.0
    use_gravity: bool = False


@dataclass
class StepReport:
    floor_events: int = 0
    clipped_cells: int = 0


def _leaf_fluxes(leaf, gamma, flux_kernel):
    """Face fluxes for all three axes of one leaf; needs filled ghosts.
    Returns (fluxes per axis, clipped-cell count) so parallel callers can
    merge counters after the join instead of sharing a counter."""
    out = []
    n_clip = 0
    for axis in range(3):
        pad = leaf.grid.padded(axis)
        w_pad = primitives(pad, gamma)
        wl, wr, engaged = reconstruct(w_pad, 1 + axis)
        n_clip += int(np.count_nonzero(np.any(engaged, axis=0)))
        out.append(flux_kernel(wl, wr, axis, gamma))
    return out, n_clip


def _apply_reflux(tree, fluxes):
    """Overwrite coarse boundary fluxes at coarse-fine faces with the 2x2
    area-mean of the covering fine fluxes (exact in FP: the mean of four is
    a 0.25 scaling, and fine/coarse cell widths differ by an exact factor 2).
    """
    n = tree.n_edge
    for leaf in tree.leaves():
        for face in range(6):
            nb = face_neighbor(tree, leaf, face)
            if not (isinstance(nb, SameLevel) and not nb.node.is_leaf):
                continue
            axis, side = face // 2, face % 2
            tang = [a for a in range(3) if a != axis]
            face_idx = n if side else 0
            for child in nb.node.children:
                off = [child.index[a] % 2 for a in range(3)]
                if off[axis] != (0 if side else 1):
                    continue  # child on the far half of the neighbor
                fine = fluxes[child.key()][axis]
                sl = [slice(None)] * 4
                sl[1 + axis] = 0 if side else n
                fine_face = fine[tuple(sl)]  # (F, n, n) on fine spacing
                rest = restrict_face(fine_face)
                dst = [slice(None)] * 4
                dst[1 + axis] = face_idx
                h = n // 2
                dst[1 + tang[0]] = slice(off[tang[0]] * h, off[tang[0]] * h + h)
                dst[1 + tang[1]] = slice(off[tang[1]] * h, off[tang[1]] * h + h)
                fluxes[leaf.key()][axis][tuple(dst)] = rest


def restrict_face(face_arr):
    """(F, n, n) fine face values -> (F, n/2, n/2) by 2x2 mean."""
    f, n, m = face_arr.shape
    return face_arr.reshape(f, n // 2, 2, m // 2, 2).mean(axis=(2, 4))


def _leaf_rhs(leaf, fluxes, params):
    h = leaf.grid.cell_width
    cells = leaf.grid.cells
    rhs = np.zeros_like(cells)
    for axis in range(3):
        fl = fluxes[axis]
        lo = [slice(None)] * 4
        hi = [slice(None)] * 4
        n = leaf.grid.n_edge
        lo[1 + axis] = slice(0, n)
        hi[1 + axis] = slice(1, n + 1)
        rhs -= (fl[tuple(hi)] - fl[tuple(lo)]) / h
    if params.omega != 0.0:
        rhs += rotating_frame_sources(cells, leaf.grid.centers(),
                                      params.omega, params.frame_center)
    if params.use_gravity:
        rhs += gravity_source_rate(cells, leaf.gacc)
    return rhs


def _apply_floors(cells, params):
    """Clamp density and internal energy; returns the event count."""
    events = 0
    if params.density_floor > 0.0:
        low = cells[F_RHO] < params.density_floor
        n_low = int(np.count_nonzero(low))
        if n_low:
            events += n_low
            cells[F_RHO] = np.maximum(cells[F_RHO], params.density_floor)
    ke = 0.5 * (cells[F_SX] ** 2 + cells[F_SY] ** 2 + cells[F_SZ] ** 2) / cells[F_RHO]
    bad = cells[F_EGY] < ke
    n_bad = int(np.count_nonzero(bad))
    if n_bad:
        events += n_bad
        cells[F_EGY] = np.maximum(cells[F_EGY], ke)
    return events


def rk3_step(tree, dt, params, exchange_fn, flux_kernel=None, engine=None,
             report=None):
    """One SSP-RK3 step over the whole tree.

    exchange_fn(tree) must fill every leaf's ghosts from the current cell
    data; it runs before each of the three stages. flux_kernel defaults to
    the plain numpy Rusanov path (the lane-width abstraction passes its own).
    Per-leaf kernels go through `engine` when provided; every task writes
    only its own leaf's arrays, so results are worker-count independent.
    """
    if flux_kernel is None:
        flux_kernel = rusanov_flux
    if report is None:
        report = StepReport()
    leaves = tree.leaves()
    u0 = {leaf.key(): leaf.grid.cells.copy() for leaf in leaves}

    for a_back, b_new in RK3_STAGES:
        exchange_fn(tree)
        fluxes = {}
        if engine is not None:
            handles = [engine.submit(lambda lf=leaf: (lf.key(), _leaf_fluxes(lf, params.gamma, flux_kernel)))
                       for leaf in leaves]
            for key, (fx, n_clip) in engine.when_all(handles).result():
                fluxes[key] = fx
                report.clipped_cells += n_clip
        else:
            for leaf in leaves:
                fx, n_clip = _leaf_fluxes(leaf, params.gamma, flux_kernel)
                fluxes[leaf.key()] = fx
                report.clipped_cells += n_clip
        _apply_reflux(tree, fluxes)

        def update(leaf):
            rhs = _leaf_rhs(leaf, fluxes[leaf.key()], params)
            cells = leaf.grid.cells
            if a_back != 0.0:
                cells += a_back * (u0[leaf.key()] - cells)
            cells += (b_new * dt) * rhs
            return _apply_floors(cells, params)

        if engine is not None:
            counts = engine.when_all([engine.submit(lambda lf=leaf: update(lf))
                                      for leaf in leaves]).result()
            report.floor_events += sum(counts)
        else:
            for leaf in leaves:
                report.floor_events += update(leaf)
    return report


def rk3_ode(f, u0, dt, steps):
    """Scalar/array ODE integration with the exact stage arithmetic of
    rk3_step (shared coefficients and incremental combine)."""
    u = u0
    for _ in range(steps):
        u_start = u
        for a_back, b_new in RK3_STAGES:
            u = u + a_back * (u_start - u) + (b_new * dt) * f(u)
    return u


# ------------------------------------------------------------------
# diagnostics
# ------------------------------------------------------------------

@dataclass
class Totals:
    mass: float
    momentum: np.ndarray
    angular_momentum: np.ndarray
    kinetic: float
    internal: float
    potential: float
    tracer_mass: np.ndarray

    @property
    def total_energy(self):
        return self.kinetic + self.internal + self.potential


def diagnostics(tree, gamma, frame_center=(0.5, 0.5, 0.5)):
    """Deterministic global totals: per-leaf pairwise sums stacked in Morton
    order, then one pairwise sum over leaves."""
    leaves = tree.leaves()
    n_tr = tree.n_tracers
    rows = np.zeros((len(leaves), 10 + n_tr))
    for i, leaf in enumerate(leaves):
        cells = leaf.grid.cells
        vol = leaf.grid.cell_width ** 3
        c = leaf.grid.centers()
        rx, ry, rz = (c[a] - frame_center[a] for a in range(3))
        sx, sy, sz = cells[F_SX], cells[F_SY], cells[F_SZ]
        ke = 0.5 * (sx ** 2 + sy ** 2 + sz ** 2) / cells[F_RHO]
        row = [np.sum(cells[F_RHO]),
               np.sum(sx), np.sum(sy), np.sum(sz),
               np.sum(ry * sz - rz * sy),
               np.sum(rz * sx - rx * sz),
               np.sum(rx * sy - ry * sx),
               np.sum(ke),
               np.sum(cells[F_EGY] - ke),
               0.5 * np.sum(cells[F_RHO] * leaf.phi) if leaf.phi is not None else 0.0]
        rows[i, :10] = np.array(row) * vol
        for t in range(n_tr):
            rows[i, 10 + t] = np.sum(cells[N_BASE_FIELDS + t]) * vol
    tot = np.sum(rows, axis=0)
    return Totals(mass=tot[0], momentum=tot[1:4], angular_momentum=tot[4:7],
                  kinetic=tot[7], internal=tot[8], potential=tot[9],
                  tracer_mass=tot[10:])


# ------------------------------------------------------------------
# root-only ghost fill (single-leaf trees; the comm layer handles real trees)
# ------------------------------------------------------------------

def reflect_slab(slab, axis):
    """Mirror a boundary slab across a wall: flip along the axis, negate the
    normal momentum component."""
    out = np.flip(slab, axis=1 + axis).copy()
    out[F_SX + axis] = -out[F_SX + axis]
    return out


def fill_root_ghosts(tree):
    grid = tree.root.grid
    n = tree.n_edge
    for face in range(6):
        axis, side = face // 2, face % 2
        if tree.boundary[axis] == "periodic":
            src = grid.boundary_slab(2 * axis + (1 - side))
        else:
            src = reflect_slab(grid.boundary_slab(face), axis)
        grid.set_ghost(face, np.array(src))


# ------------------------------------------------------------------
# 1D Sod driver (a single x-pencil through the same kernels)
# ------------------------------------------------------------------

def sod_run_1d(n_cells=400, t_end=0.2, cfl=0.4, gamma=1.4,
               left=(1.0, 0.0, 1.0), right=(0.125, 0.0, 0.1), x0=0.5,
               flux_kernel=None):
    """March the Sod tube on a 1D pencil of n_cells over [0,1] with
    reflecting ends; returns (x_centers, rho, u, p) at t_end."""
    if flux_kernel is None:
        flux_kernel = rusanov_flux
    h = 1.0 / n_cells
    x = (np.arange(n_cells) + 0.5) * h
    w = np.zeros((5, n_cells))
    sel = x < x0
    w[F_RHO] = np.where(sel, left[0], right[0])
    w[F_SX] = np.where(sel, left[1], right[1])
    w[F_EGY] = np.where(sel, left[2], right[2])
    u = conserved(w, gamma)

    def pad_walls(u_arr):
        lo = u_arr[:, :GHOST][:, ::-1].copy()
        lo[F_SX] = -lo[F_SX]
        hi = u_arr[:, -GHOST:][:, ::-1].copy()
        hi[F_SX] = -hi[F_SX]
        return np.concatenate([lo, u_arr, hi], axis=1)

    t = 0.0
    while t < t_end:
        rho = u[F_RHO]
        ke = 0.5 * np.sum(u[F_SX:F_SZ + 1] ** 2, axis=0) / rho
        p = np.maximum((gamma - 1.0) * (u[F_EGY] - ke), 0.0)
        c = np.sqrt(gamma * p / rho)
        dt = cfl * h / float(np.max(np.abs(u[F_SX] / rho) + c))
        dt = min(dt, t_end - t)
        u_start = u.copy()
        for a_back, b_new in RK3_STAGES:
            w_pad = primitives(pad_walls(u), gamma)
            wl, wr, _ = reconstruct(w_pad, 1)
            fl = flux_kernel(wl, wr, 0, gamma)
            rhs = -(fl[:, 1:] - fl[:, :-1]) / h
            u = u + a_back * (u_start - u) + (b_new * dt) * rhs
        t += dt
    w = primitives(u, gamma)
    return x, w[F_RHO], w[F_SX], w[F_EGY]


def load_sod_reference(path):
    """Reference profile file: whitespace-separated columns x, rho, p
    ('#' comments allowed). Returns (x, rho, p) arrays."""
    data = np.loadtxt(path)
    if data.ndim != 2 or data.shape[1] != 3:
        raise ValueError(f"reference profile must have 3 columns, got {data.shape}")
    return data[:, 0], data[:, 1], data[:, 2]
