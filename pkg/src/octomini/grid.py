"""Block-structured octree grid.

The domain is a cube carved into an octree of nodes. Every node, leaf or
interior, covers a cubic region; leaves own an n_edge^3 lattice of cells with
fluid state, interior nodes own exactly eight children. Refining a node
doubles the local resolution while the per-node working-set size stays fixed,
which is what keeps every kernel operating on identically shaped blocks.

Cell data is stored field-major: ``cells[f, i, j, k]`` with f indexing
(density, momentum x/y/z, energy, tracer densities...) and i/j/k the x/y/z
cell coordinates. Ghost cells are kept per face as slabs of width GHOST.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

# fields: density, momentum, energy, then tracer densities
F_RHO = 0
F_SX, F_SY, F_SZ = 1, 2, 3
F_EGY = 4
N_BASE_FIELDS = 5

GHOST = 2  # slope stencils at the first ghost layer need a second layer

# faces are 2*axis + side, side 0 = low, 1 = high
FACES = range(6)


def field_count(n_tracers: int) -> int:
    return N_BASE_FIELDS + n_tracers


# ------------------------------------------------------------------
# sub-grid
# ------------------------------------------------------------------

class SubGrid:
    """Fixed-size cubic block of cells plus per-face ghost slabs."""

    def __init__(self, n_edge, origin, cell_width, n_tracers=0, cells=None):
        if n_edge < 4 or n_edge % 2 != 0:
            raise ConfigError(f"n_edge must be even and >= 4, got {n_edge}")
        self.n_edge = n_edge
        self.origin = np.asarray(origin, dtype=float)
        self.cell_width = float(cell_width)
        self.n_tracers = n_tracers
        nf = field_count(n_tracers)
        if cells is None:
            cells = np.zeros((nf, n_edge, n_edge, n_edge))
        cells = np.asarray(cells, dtype=float)
        if cells.shape != (nf, n_edge, n_edge, n_edge):
            raise ConfigError(f"cell array shape {cells.shape} does not match "
                              f"({nf}, {n_edge}, {n_edge}, {n_edge})")
        self.cells = cells
        # ghost[face] is a slab shaped like the block but with extent GHOST
        # along the face axis, or None until filled
        self.ghost = {f: None for f in FACES}
        self._centers = None

    @property
    def n_cells(self):
        return self.n_edge ** 3

    @property
    def n_fields(self):
        return self.cells.shape[0]

    def centers(self):
        """Cell-center coordinates, shape (3, n, n, n)."""
        if self._centers is None:
            n, h = self.n_edge, self.cell_width
            ax = self.origin[:, None] + (np.arange(n) + 0.5)[None, :] * h
            self._centers = np.stack(
                np.meshgrid(ax[0], ax[1], ax[2], indexing="ij"))
        return self._centers

    def ghost_shape(self, face):
        axis = face // 2
        shape = [self.n_fields, self.n_edge, self.n_edge, self.n_edge]
        shape[1 + axis] = GHOST
        return tuple(shape)

    def boundary_slab(self, face, depth=GHOST):
        """Interior slab of the given depth adjacent to a face (a view)."""
        axis, side = face // 2, face % 2
        sl = [slice(None)] * 4
        sl[1 + axis] = slice(0, depth) if side == 0 else slice(self.n_edge - depth, self.n_edge)
        return self.cells[tuple(sl)]

    def set_ghost(self, face, slab):
        slab = np.asarray(slab, dtype=float)
        if slab.shape != self.ghost_shape(face):
            raise ConfigError(f"ghost slab for face {face} has shape {slab.shape}, "
                              f"want {self.ghost_shape(face)}")
        self.ghost[face] = slab

    def padded(self, axis):
        """Cells extended by both ghost slabs along one axis."""
        lo, hi = self.ghost[2 * axis], self.ghost[2 * axis + 1]
        if lo is None or hi is None:
            raise RuntimeError(f"ghosts along axis {axis} not filled")
        return np.concatenate([lo, self.cells, hi], axis=1 + axis)


@dataclass
class ConservedState:
    """Per-cell conserved quantities; a convenience view onto the field-major
    arrays, mainly for tests and single-cell inspection."""
    rho: float
    s: np.ndarray          # momentum density, 3-vector
    energy: float
    tracers: np.ndarray    # tracer densities rho * X_i

    @classmethod
    def from_cell(cls, cells, i, j, k):
        return cls(rho=float(cells[F_RHO, i, j, k]),
                   s=cells[F_SX:F_SZ + 1, i, j, k].copy(),
                   energy=float(cells[F_EGY, i, j, k]),
                   tracers=cells[N_BASE_FIELDS:, i, j, k].copy())


# ------------------------------------------------------------------
# octree
# ------------------------------------------------------------------

class OctreeNode:
    """Leaf (owns a SubGrid) or interior (owns exactly eight children)."""

    def __init__(self, level, index):
        self.level = level
        self.index = tuple(int(c) for c in index)
        self.children = None       # list of 8 nodes, child c at offset bits of c
        self.grid = None           # SubGrid for leaves
        self.locality = 0
        self.moments = None        # gravity: per-cell multipoles
        self.expansion = None      # gravity: per-cell Taylor coefficients
        self.phi = None            # gravity: per-cell potential (leaves)
        self.gacc = None           # gravity: per-cell acceleration (leaves)

    @property
    def is_leaf(self):
        return self.children is None

    def key(self):
        return (self.level, self.index)

    def __repr__(self):
        kind = "leaf" if self.is_leaf else "interior"
        return f"<node L{self.level} {self.index} {kind}>"


def child_offset(c):
    return (c & 1, (c >> 1) & 1, (c >> 2) & 1)


class Tree:
    """Octree over a cubic domain with per-axis boundary mode."""

    def __init__(self, n_edge, max_level, n_tracers=0, domain_size=1.0,
                 boundary=("periodic", "periodic", "periodic")):
        if n_edge < 4 or n_edge % 2 != 0:
            raise ConfigError(f"n_edge must be even and >= 4, got {n_edge}")
        if max_level < 0:
            raise ConfigError("max_level must be >= 0")
        for b in boundary:
            if b not in ("periodic", "wall"):
                raise ConfigError(f"unknown boundary mode {b!r}")
        self.n_edge = n_edge
        self.max_level = max_level
        self.n_tracers = n_tracers
        self.domain_size = float(domain_size)
        self.boundary = tuple(boundary)
        self.root = OctreeNode(0, (0, 0, 0))
        self.nodes = {self.root.key(): self.root}
        self._leaves = None          # Morton-ordered cache
        self.interactions = None     # gravity interaction lists cache

    def cell_width(self, level):
        return self.domain_size / (self.n_edge * (1 << level))

    def node_origin(self, level, index):
        w = self.domain_size / (1 << level)
        return np.asarray(index, dtype=float) * w

    def make_grid(self, level, index):
        return SubGrid(self.n_edge, self.node_origin(level, index),
                       self.cell_width(level), self.n_tracers)

    def invalidate_caches(self):
        self._leaves = None
        self.interactions = None

    def split(self, node):
        """Turn a leaf into an interior node with 8 fresh (empty-grid) leaves."""
        assert node.is_leaf
        node.grid = None
        node.children = []
        for c in range(8):
            off = child_offset(c)
            idx = tuple(2 * node.index[a] + off[a] for a in range(3))
            child = OctreeNode(node.level + 1, idx)
            child.locality = node.locality
            child.grid = self.make_grid(child.level, idx)
            node.children.append(child)
            self.nodes[child.key()] = child
        self.invalidate_caches()
        return node.children

    def leaves(self):
        if self._leaves is None:
            self._leaves = enumerate_leaves(self)
        return self._leaves


# ------------------------------------------------------------------
# Morton (Z-order) enumeration
# ------------------------------------------------------------------

def morton_key(level, index, max_level):
    """Bit-interleaved key of the level-normalized index, x least significant."""
    shift = max_level - level
    ix, iy, iz = (c << shift for c in index)
    key = 0
    for bit in range(max_level + 1):
        key |= ((ix >> bit) & 1) << (3 * bit)
        key |= ((iy >> bit) & 1) << (3 * bit + 1)
        key |= ((iz >> bit) & 1) << (3 * bit + 2)
    return key


def enumerate_leaves(tree):
    """Leaves in Morton order of level-normalized indices (depth-first with
    x-fastest child visitation, which realizes exactly that order)."""
    out = []
    stack = [tree.root]
    while stack:
        node = stack.pop()
        if node.is_leaf:
            out.append(node)
        else:
            # push in reverse so child 0 (x fastest) pops first
            stack.extend(node.children[::-1])
    return out


# ------------------------------------------------------------------
# neighbors
# ------------------------------------------------------------------

@dataclass
class SameLevel:
    node: OctreeNode


@dataclass
class Coarser:
    node: OctreeNode
    octant: tuple      # interpolation marker: fine region's position bits


@dataclass
class DomainBoundary:
    pass


def face_neighbor(tree, leaf, face):
    """Resolve the neighbor across a leaf face.

    Returns SameLevel(node) when a node exists at the leaf's level (the node
    may be interior, in which case the facing children hold the data),
    Coarser(node, octant) when the region is owned by a shallower leaf, or
    DomainBoundary() across a wall.
    """
    axis, side = face // 2, face % 2
    level, index = leaf.level, leaf.index
    size = 1 << level
    j = index[axis] + (1 if side else -1)
    if tree.boundary[axis] == "wall" and not (0 <= j < size):
        return DomainBoundary()
    j %= size
    nidx = tuple(j if a == axis else index[a] for a in range(3))
    node = tree.nodes.get((level, nidx))
    if node is not None:
        return SameLevel(node)
    for lv in range(level - 1, -1, -1):
        shift = level - lv
        key = (lv, tuple(c >> shift for c in nidx))
        cand = tree.nodes.get(key)
        if cand is not None:
            if not cand.is_leaf:
                raise RuntimeError("inconsistent tree: interior node without "
                                   "the covered child present")
            octant = tuple((c >> (shift - 1)) & 1 for c in nidx)
            return Coarser(cand, octant)
    raise RuntimeError(f"no neighbor found for {leaf!r} face {face}")


def _region_step(tree, level, index, d):
    """Same-level index displaced by direction d with periodic wrap.
    Returns None when the step leaves the domain through a wall."""
    size = 1 << level
    out = []
    for a in range(3):
        j = index[a] + d[a]
        if not (0 <= j < size):
            if tree.boundary[a] == "wall":
                return None
            j %= size
        out.append(j)
    return tuple(out)


_DIRECTIONS = [(dx, dy, dz)
               for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
               if (dx, dy, dz) != (0, 0, 0)]


def _deepest_touching(tree, level, nidx, d, cap):
    """Deepest leaf level inside the region (level, nidx) that touches the
    region we stepped away from (direction d points from it to nidx).
    Stops descending once the answer exceeds cap."""
    node = tree.nodes.get((level, nidx))
    if node is None:
        return -1  # covered by a shallower leaf; cannot be deeper
    if node.is_leaf:
        return node.level
    best = -1
    for c, child in enumerate(node.children):
        off = child_offset(c)
        touching = all(
            (d[a] == 0) or (d[a] > 0 and off[a] == 0) or (d[a] < 0 and off[a] == 1)
            for a in range(3))
        if not touching:
            continue
        got = _deepest_touching(tree, level + 1,
                                tuple(2 * nidx[a] + off[a] for a in range(3)),
                                d, cap)
        best = max(best, got)
        if best > cap:
            return best
    return best


# ------------------------------------------------------------------
# refinement
# ------------------------------------------------------------------

@dataclass
class RefinementCriteria:
    """Per-cell refinement predicates; a leaf refines when any cell trips any
    of them. The tracer band (t, 1-t) targets material interfaces; values of
    tracer_band >= 0.5 make the open interval empty and disable it."""
    density_ref: float = np.inf
    grad_ref: float = np.inf
    tracer_band: float = 0.5
    max_level: int = 0

    def __post_init__(self):
        if not (0.0 < self.tracer_band < 1.0):
            raise ConfigError("tracer_band must lie in (0, 1)")
        if self.max_level < 0:
            raise ConfigError("max_level must be >= 0")


def flag_for_refinement(node, criteria):
    """True when any cell trips the density, gradient, or tracer predicate.

    Needs ghosts (width >= 1) for the central-difference gradient; the
    gradient test is |grad rho| * h / rho with one-cell central differences.
    """
    grid = node.grid
    rho = grid.cells[F_RHO]
    if np.any(rho > criteria.density_ref):
        return True
    # |grad rho| * h via central differences on the padded density
    diffs = []
    for axis in range(3):
        pad = grid.padded(axis)[F_RHO]
        n = grid.n_edge
        sl_hi = [slice(None)] * 3
        sl_lo = [slice(None)] * 3
        sl_hi[axis] = slice(GHOST + 1, GHOST + 1 + n)
        sl_lo[axis] = slice(GHOST - 1, GHOST - 1 + n)
        diffs.append(0.5 * (pad[tuple(sl_hi)] - pad[tuple(sl_lo)]))
    grad_h = np.sqrt(diffs[0] ** 2 + diffs[1] ** 2 + diffs[2] ** 2)
    if np.any(grad_h > criteria.grad_ref * rho):
        return True
    t = criteria.tracer_band
    for k in range(grid.n_tracers):
        x = grid.cells[N_BASE_FIELDS + k] / rho
        if np.any((x > t) & (x < 1.0 - t)):
            return True
    return False


# ------------------------------------------------------------------
# tree construction
# ------------------------------------------------------------------

def _sample_node(tree, scenario, node, pad):
    """Fill a leaf's cells (and optionally ghost slabs) by sampling the
    initial condition at cell centers. Ghost positions wrap on periodic axes;
    the IC callable must tolerate out-of-domain positions on wall axes."""
    n, g = tree.n_edge, pad
    h = tree.cell_width(node.level)
    origin = tree.node_origin(node.level, node.index)
    coords = [origin[a] + (np.arange(-g, n + g) + 0.5) * h for a in range(3)]
    for a in range(3):
        if tree.boundary[a] == "periodic":
            coords[a] = np.mod(coords[a], tree.domain_size)
    x, y, z = np.meshgrid(*coords, indexing="ij")
    fields = np.asarray(scenario.ic(x, y, z), dtype=float)
    nf = field_count(tree.n_tracers)
    if fields.shape != (nf, n + 2 * g, n + 2 * g, n + 2 * g):
        raise ConfigError(f"initial condition returned shape {fields.shape}, "
                          f"expected ({nf}, {n + 2 * g}, ...)")
    core = fields[:, g:n + g, g:n + g, g:n + g]
    if node.grid is None:
        node.grid = tree.make_grid(node.level, node.index)
    node.grid.cells[...] = core
    if g > 0:
        for face in FACES:
            axis, side = face // 2, face % 2
            sl = [slice(None)] * 4
            sl[1 + axis] = slice(0, g) if side == 0 else slice(n + g, n + 2 * g)
            # clip the tangential extents back to the block footprint
            for a in range(3):
                if a != axis:
                    sl[1 + a] = slice(g, n + g)
            node.grid.set_ghost(face, fields[tuple(sl)])


def build_tree(scenario, criteria):
    """Refine from the root until no leaf below max_level trips a predicate
    and the leaf levels are 2:1 balanced across face, edge, and corner
    neighbors (the full balance implies the face balance and keeps every
    adjacent-leaf level gap at most one).
    """
    n_edge = scenario.n_edge
    max_level = criteria.max_level
    budget = getattr(scenario, "cell_budget", 2048)
    if n_edge * (1 << max_level) > budget:
        raise ConfigError(
            f"finest lattice edge {n_edge * (1 << max_level)} exceeds the "
            f"cell budget {budget}; raise cell_budget deliberately for large runs")
    boundary = getattr(scenario, "boundary", ("periodic",) * 3)
    tree = Tree(n_edge, max_level, n_tracers=scenario.n_tracers,
                domain_size=getattr(scenario, "domain_size", 1.0),
                boundary=boundary)
    _sample_node(tree, scenario, tree.root, GHOST)

    while True:
        changed = False
        # predicate pass
        for leaf in list(tree.leaves()):
            if leaf.level >= max_level:
                continue
            if flag_for_refinement(leaf, criteria):
                for child in tree.split(leaf):
                    _sample_node(tree, scenario, child, GHOST)
                changed = True
        # balance pass: refine any leaf with a touching leaf 2+ levels deeper
        balancing = True
        while balancing:
            balancing = False
            for leaf in list(tree.leaves()):
                if not leaf.is_leaf:
                    continue
                cap = leaf.level + 1
                for d in _DIRECTIONS:
                    nidx = _region_step(tree, leaf.level, leaf.index, d)
                    if nidx is None:
                        continue
                    if _deepest_touching(tree, leaf.level, nidx, d, cap) > cap:
                        for child in tree.split(leaf):
                            _sample_node(tree, scenario, child, GHOST)
                        balancing = changed = True
                        break
        if not changed:
            return tree


def is_balanced(tree):
    """Face-adjacent leaf levels differ by at most one (checked for all 26
    touch directions, which is the stronger invariant this tree maintains)."""
    for leaf in tree.leaves():
        for d in _DIRECTIONS:
            nidx = _region_step(tree, leaf.level, leaf.index, d)
            if nidx is None:
                continue
            if _deepest_touching(tree, leaf.level, nidx, d, leaf.level + 1) > leaf.level + 1:
                return False
    return True


# ------------------------------------------------------------------
# restriction
# ------------------------------------------------------------------

def restrict_block(arr):
    """Coarsen by one level: each coarse cell is the mean of its 2x2x2 fine
    cells, which preserves every field integral exactly (up to rounding)."""
    *lead, nx, ny, nz = arr.shape
    shape = (*lead, nx // 2, 2, ny // 2, 2, nz // 2, 2)
    return arr.reshape(shape).mean(axis=(-5, -3, -1))


# ------------------------------------------------------------------
# snapshots
# ------------------------------------------------------------------

SNAPSHOT_MAGIC = "OCTOMINI v1"


def write_snapshot(tree, path):
    """Header line 'OCTOMINI v1 <n_edge> <max_level> <leaf_count>', then per
    leaf in Morton order: level and index triple as little-endian int64,
    followed by the cell fields as little-endian float64, field-major."""
    leaves = tree.leaves()
    with open(path, "wb") as fh:
        fh.write(f"{SNAPSHOT_MAGIC} {tree.n_edge} {tree.max_level} {len(leaves)}\n"
                 .encode("ascii"))
        for leaf in leaves:
            head = np.array([leaf.level, *leaf.index], dtype="<i8")
            fh.write(head.tobytes())
            fh.write(np.ascontiguousarray(leaf.grid.cells, dtype="<f8").tobytes())


@dataclass
class SnapshotLeaf:
    level: int
    index: tuple
    cells: np.ndarray


def read_snapshot(path):
    """Returns (n_edge, max_level, [SnapshotLeaf...]). The field count is
    recovered from the record size, so tracer count round-trips implicitly."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        parts = header.split()
        if parts[:2] != SNAPSHOT_MAGIC.split() or len(parts) != 5:
            raise ConfigError(f"bad snapshot header: {header!r}")
        n_edge, max_level, count = (int(p) for p in parts[2:])
        body = fh.read()
    if count == 0:
        raise ConfigError("snapshot with zero leaves")
    per_leaf, rem = divmod(len(body), count)
    ncell = n_edge ** 3
    nf, rem2 = divmod(per_leaf - 4 * 8, 8 * ncell)
    if rem != 0 or rem2 != 0 or nf < N_BASE_FIELDS:
        raise ConfigError("snapshot payload size inconsistent with header")
    out = []
    for i in range(count):
        rec = body[i * per_leaf:(i + 1) * per_leaf]
        head = np.frombuffer(rec[:32], dtype="<i8")
        cells = np.frombuffer(rec[32:], dtype="<f8").reshape(nf, n_edge, n_edge, n_edge)
        out.append(SnapshotLeaf(int(head[0]), tuple(int(c) for c in head[1:]),
                                cells.copy()))
    return n_edge, max_level, out
