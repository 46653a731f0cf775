"""Octree FMM gravity: per-cell multipoles, three traversal phases, oracle.

Every node carries one multipole entry per cell: leaves hold plain
monopoles (rho h^3 at cell centers), interior cells aggregate the eight
fine cells they cover via parallel-axis shifts about the running center
of mass.  Same-level node pairs interact cell-to-cell through an order-3
Taylor kernel; adjacent leaf pairs fall back to exact pairwise Newton.
G = 1 throughout.

Sign conventions: phi(x) = -sum m/r, g = -grad phi.  Displacements are
target minus source, so flipping a pair's direction negates every odd
derivative tensor exactly (IEEE sign symmetry), which is what makes the
pairwise forces equal and opposite without a shared evaluation.

Symmetric tensor packing (index order used everywhere):
  quad  6: xx xy xz yy yz zz            multiplicities 1 2 2 1 2 1
  oct  10: xxx xxy xxz xyy xyz xzz yyy yyz yzz zzz
           multiplicities 1 3 3 3 6 3 1 3 3 1
Expansion coefficients pack to 20 rows: [L0, L1(3), L2(6), L3(10)].
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .engine import SplitPolicy
from .errors import SolverFailure

QUAD_MULT = np.array([1.0, 2.0, 2.0, 1.0, 2.0, 1.0])
OCT_MULT = np.array([1.0, 3.0, 3.0, 3.0, 6.0, 3.0, 1.0, 3.0, 3.0, 1.0])

# cap on flattened (target cell, source cell) pairs evaluated per kernel
# call; chunking is by fixed-size slices so results never depend on it
M2L_BATCH_CAP = 1 << 20

_P2P_TARGET_BLOCK = 512

# live per-node M2L staging buffers are drained once they exceed this
_M2L_STAGE_BUDGET = 128 << 20


@dataclass
class Moments:
    """Per-cell multipoles of one node: mass, com, quad/oct about the com."""

    m: np.ndarray          # (n, n, n)
    com: np.ndarray        # (3, n, n, n)
    quad: np.ndarray       # (6, n, n, n) packed symmetric, traceful
    oct: np.ndarray        # (10, n, n, n) packed symmetric


@dataclass
class Expansion:
    """Per-cell Taylor coefficients of phi about each cell's center."""

    coeffs: np.ndarray     # (20, n, n, n)
    center: np.ndarray     # (3, n, n, n)


@dataclass
class InteractionLists:
    same_level: dict = field(default_factory=dict)   # key -> sorted [keys]
    p2p: dict = field(default_factory=dict)          # leaf key -> sorted [keys]


@dataclass
class GravityReport:
    timings: dict = field(default_factory=dict)
    m2l_pairs: int = 0
    p2p_pairs: int = 0


def node_cell_centers(tree, node):
    """Geometric cell centers of any node, (3, n, n, n)."""
    n = tree.n_edge
    h = tree.cell_width(node.level)
    origin = tree.node_origin(node.level, node.index)
    ax = origin[:, None] + (np.arange(n) + 0.5)[None, :] * h
    return np.stack(np.meshgrid(ax[0], ax[1], ax[2], indexing="ij"))


# ----------------------------------------------------------------------
# P2M / M2M
# ----------------------------------------------------------------------

def p2m(tree, leaf) -> Moments:
    """Leaf monopoles: m = rho h^3 at cell centers, no higher moments."""
    rho = leaf.grid.cells[0]
    if not np.all(np.isfinite(rho)):
        raise SolverFailure("non-finite density in p2m")
    h = leaf.grid.cell_width
    m = rho * h ** 3
    com = node_cell_centers(tree, leaf).copy()
    n = tree.n_edge
    return Moments(m=m, com=com,
                   quad=np.zeros((6, n, n, n)), oct=np.zeros((10, n, n, n)))


def _gather_octant(arr, h):
    """(..., n, n, n) -> (..., h, h, h, 8): the 2x2x2 fine group per cell."""
    lead = arr.shape[:-3]
    a = arr.reshape(lead + (h, 2, h, 2, h, 2))
    a = np.moveaxis(a, (-5, -3, -1), (-3, -2, -1))
    return a.reshape(lead + (h, h, h, 8))


def m2m_combine(tree, parent) -> Moments:
    """Aggregate the 8 covered fine cells of each parent cell."""
    n = tree.n_edge
    h = n // 2
    geo = node_cell_centers(tree, parent)
    m = np.zeros((n, n, n))
    com = np.zeros((3, n, n, n))
    quad = np.zeros((6, n, n, n))
    octm = np.zeros((10, n, n, n))
    for c, child in enumerate(parent.children):
        ox, oy, oz = c & 1, (c >> 1) & 1, (c >> 2) & 1
        blk = (slice(ox * h, (ox + 1) * h),
               slice(oy * h, (oy + 1) * h),
               slice(oz * h, (oz + 1) * h))
        cm = _gather_octant(child.moments.m, h)          # (h,h,h,8)
        ccom = _gather_octant(child.moments.com, h)      # (3,h,h,h,8)
        cquad = _gather_octant(child.moments.quad, h)
        coct = _gather_octant(child.moments.oct, h)
        mt = np.sum(cm, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            zc = np.sum(cm[None] * ccom, axis=-1) / mt[None]
        zc = np.where(mt[None] > 0.0, zc, geo[(slice(None),) + blk])
        b = ccom - zc[..., None]
        bx, by, bz = b[0], b[1], b[2]
        qq = np.empty((6,) + cm.shape)
        qq[0] = cquad[0] + cm * bx * bx
        qq[1] = cquad[1] + cm * bx * by
        qq[2] = cquad[2] + cm * bx * bz
        qq[3] = cquad[3] + cm * by * by
        qq[4] = cquad[4] + cm * by * bz
        qq[5] = cquad[5] + cm * bz * bz
        oo = np.empty((10,) + cm.shape)
        oo[0] = coct[0] + 3 * bx * cquad[0] + cm * bx * bx * bx
        oo[1] = coct[1] + 2 * bx * cquad[1] + by * cquad[0] + cm * bx * bx * by
        oo[2] = coct[2] + 2 * bx * cquad[2] + bz * cquad[0] + cm * bx * bx * bz
        oo[3] = coct[3] + bx * cquad[3] + 2 * by * cquad[1] + cm * bx * by * by
        oo[4] = (coct[4] + bx * cquad[4] + by * cquad[2] + bz * cquad[1]
                 + cm * bx * by * bz)
        oo[5] = coct[5] + bx * cquad[5] + 2 * bz * cquad[2] + cm * bx * bz * bz
        oo[6] = coct[6] + 3 * by * cquad[3] + cm * by * by * by
        oo[7] = coct[7] + 2 * by * cquad[4] + bz * cquad[3] + cm * by * by * bz
        oo[8] = coct[8] + by * cquad[5] + 2 * bz * cquad[4] + cm * by * bz * bz
        oo[9] = coct[9] + 3 * bz * cquad[5] + cm * bz * bz * bz
        m[blk] = mt
        com[(slice(None),) + blk] = zc
        quad[(slice(None),) + blk] = np.sum(qq, axis=-1)
        octm[(slice(None),) + blk] = np.sum(oo, axis=-1)
    return Moments(m=m, com=com, quad=quad, oct=octm)


def _nodes_by_level(tree):
    levels = {}
    stack = [tree.root]
    while stack:
        node = stack.pop()
        levels.setdefault(node.level, []).append(node)
        if not node.is_leaf:
            stack.extend(node.children)
    for lv in levels.values():
        lv.sort(key=lambda nd: nd.index[::-1])
    return levels


def m2m_upsweep(tree, engine=None):
    """Bottom-up: leaf p2m, then per-level parent aggregation."""
    levels = _nodes_by_level(tree)
    for level in sorted(levels, reverse=True):
        def work(node):
            if node.is_leaf:
                node.moments = p2m(tree, node)
            else:
                node.moments = m2m_combine(tree, node)
        nodes = levels[level]
        if engine is None:
            for node in nodes:
                work(node)
        else:
            engine.when_all([engine.submit(work, nd) for nd in nodes]).result()


# ----------------------------------------------------------------------
# interaction lists
# ----------------------------------------------------------------------

def _adjacent(a, b):
    return max(abs(a.index[i] - b.index[i]) for i in range(3)) <= 1


def _collect_leaves(node):
    out, stack = [], [node]
    while stack:
        nd = stack.pop()
        if nd.is_leaf:
            out.append(nd)
        else:
            stack.extend(nd.children)
    return out


def build_interaction_lists(tree) -> InteractionLists:
    """Dual-tree descent from (root, root).

    Same-level non-adjacent pairs whose parents were adjacent become M2L
    partners; adjacent leaf pairs go to p2p.  A leaf adjacent to an
    interior node has no same-level peer below, so it interacts with that
    subtree's leaves by exact p2p (cost, not accuracy).
    """
    if tree.interactions is not None:
        return tree.interactions
    lists = InteractionLists()

    def add_pair(d, ka, kb):
        d.setdefault(ka, []).append(kb)
        d.setdefault(kb, []).append(ka)

    def descend(a, b):
        if a is b:
            if not a.is_leaf:
                for i in range(8):
                    for j in range(i + 1, 8):
                        descend(a.children[i], a.children[j])
                    descend(a.children[i], a.children[i])
            return
        if not _adjacent(a, b):
            add_pair(lists.same_level, a.key(), b.key())
            return
        if a.is_leaf and b.is_leaf:
            add_pair(lists.p2p, a.key(), b.key())
        elif not a.is_leaf and not b.is_leaf:
            for ca in a.children:
                for cb in b.children:
                    descend(ca, cb)
        else:
            leaf, interior = (a, b) if a.is_leaf else (b, a)
            for lb in _collect_leaves(interior):
                add_pair(lists.p2p, leaf.key(), lb.key())

    descend(tree.root, tree.root)
    for d in (lists.same_level, lists.p2p):
        for k in d:
            d[k] = sorted(d[k])
    tree.interactions = lists
    return lists


# ----------------------------------------------------------------------
# M2L kernel
# ----------------------------------------------------------------------

def m2l_components(dx, dy, dz, m, quad, oct):
    """Order-3 local-expansion contributions, packed (20, ...).

    d = target expansion center minus source com.  quad (6, ...) and
    oct (10, ...) are the source moments; all inputs broadcast together.
    """
    r2 = dx * dx + dy * dy + dz * dz
    ir = 1.0 / np.sqrt(r2)
    ir2 = ir * ir
    ir3 = ir * ir2
    ir5 = ir3 * ir2
    ir7 = ir5 * ir2

    d1x, d1y, d1z = -dx * ir3, -dy * ir3, -dz * ir3
    d2 = (3.0 * dx * dx * ir5 - ir3, 3.0 * dx * dy * ir5, 3.0 * dx * dz * ir5,
          3.0 * dy * dy * ir5 - ir3, 3.0 * dy * dz * ir5,
          3.0 * dz * dz * ir5 - ir3)
    d3 = (-15.0 * dx * dx * dx * ir7 + 9.0 * dx * ir5,
          -15.0 * dx * dx * dy * ir7 + 3.0 * dy * ir5,
          -15.0 * dx * dx * dz * ir7 + 3.0 * dz * ir5,
          -15.0 * dx * dy * dy * ir7 + 3.0 * dx * ir5,
          -15.0 * dx * dy * dz * ir7,
          -15.0 * dx * dz * dz * ir7 + 3.0 * dx * ir5,
          -15.0 * dy * dy * dy * ir7 + 9.0 * dy * ir5,
          -15.0 * dy * dy * dz * ir7 + 3.0 * dz * ir5,
          -15.0 * dy * dz * dz * ir7 + 3.0 * dy * ir5,
          -15.0 * dz * dz * dz * ir7 + 9.0 * dz * ir5)

    qd2 = sum(QUAD_MULT[p] * quad[p] * d2[p] for p in range(6))
    od3 = sum(OCT_MULT[p] * oct[p] * d3[p] for p in range(10))
    # (Q : D3)_i, contracting the two trailing indices of D3
    qd3x = (quad[0] * d3[0] + 2 * quad[1] * d3[1] + 2 * quad[2] * d3[2]
            + quad[3] * d3[3] + 2 * quad[4] * d3[4] + quad[5] * d3[5])
    qd3y = (quad[0] * d3[1] + 2 * quad[1] * d3[3] + 2 * quad[2] * d3[4]
            + quad[3] * d3[6] + 2 * quad[4] * d3[7] + quad[5] * d3[8])
    qd3z = (quad[0] * d3[2] + 2 * quad[1] * d3[4] + 2 * quad[2] * d3[5]
            + quad[3] * d3[7] + 2 * quad[4] * d3[8] + quad[5] * d3[9])

    out = np.empty((20,) + np.broadcast(dx, m).shape)
    out[0] = -(m * ir + 0.5 * qd2 - (1.0 / 6.0) * od3)
    out[1] = -(m * d1x + 0.5 * qd3x)
    out[2] = -(m * d1y + 0.5 * qd3y)
    out[3] = -(m * d1z + 0.5 * qd3z)
    for p in range(6):
        out[4 + p] = -m * d2[p]
    for p in range(10):
        out[10 + p] = -m * d3[p]
    return out


def m2l_same_level(node_a, node_b, kernel=None):
    """Accumulate both directions of one same-level node pair.

    Returns (contrib_a, contrib_b), each (20, n, n, n), so callers control
    merge order.  Every cell of a interacts with every cell of b.
    """
    if kernel is None:
        kernel = m2l_components
    if node_a.level != node_b.level:
        raise SolverFailure("m2l_same_level requires equal levels")
    if _adjacent(node_a, node_b):
        raise SolverFailure("m2l_same_level pair is adjacent")
    out = []
    for tgt, src in ((node_a, node_b), (node_b, node_a)):
        tc = tgt.expansion.center.reshape(3, -1)
        sc = src.moments.com.reshape(3, -1)
        d = tc[:, :, None] - sc[:, None, :]        # (3, T, S)
        if not np.all(d[0] ** 2 + d[1] ** 2 + d[2] ** 2 > 0.0):
            raise SolverFailure("coincident expansion centers in m2l")
        T, S = d.shape[1], d.shape[2]
        m = np.broadcast_to(src.moments.m.reshape(-1), (T, S))
        quad = np.broadcast_to(src.moments.quad.reshape(6, 1, -1), (6, T, S))
        octm = np.broadcast_to(src.moments.oct.reshape(10, 1, -1), (10, T, S))
        comp = kernel(d[0].reshape(-1), d[1].reshape(-1), d[2].reshape(-1),
                      m.reshape(-1), quad.reshape(6, -1), octm.reshape(10, -1))
        contrib = np.sum(comp.reshape(20, T, S), axis=2)
        out.append(contrib.reshape((20,) + tgt.expansion.center.shape[1:]))
    return out[0], out[1]


def _m2l_partner_rows(tree, tc, partners, staged, start, stop, kernel):
    """Fill staged[p] = summed contributions of partner p onto all targets.

    Each partner is evaluated in target blocks sized so a block never
    exceeds M2L_BATCH_CAP flattened cell pairs; every target row still sums
    its full source axis in one np.sum, so the result is bitwise
    independent of the blocking and of how partners are chunked.
    """
    T = tc.shape[1]
    for p in range(start, stop):
        src = tree.nodes[partners[p]].moments
        sc = src.com.reshape(3, -1)
        sm = src.m.reshape(-1)
        sq = src.quad.reshape(6, -1)
        so = src.oct.reshape(10, -1)
        S = sc.shape[1]
        tb = max(1, M2L_BATCH_CAP // S)
        for lo in range(0, T, tb):
            hi = min(lo + tb, T)
            d = tc[:, lo:hi, None] - sc[:, None, :]          # (3, tb, S)
            B = (hi - lo) * S
            m = np.broadcast_to(sm, (hi - lo, S)).reshape(B)
            quad = np.broadcast_to(sq[:, None, :], (6, hi - lo, S)).reshape(6, B)
            octm = np.broadcast_to(so[:, None, :], (10, hi - lo, S)).reshape(10, B)
            comp = kernel(d[0].reshape(B), d[1].reshape(B),
                          d[2].reshape(B), m, quad, octm)
            staged[p][:, lo:hi] = np.sum(comp.reshape(20, hi - lo, S), axis=2)


def m2l_phase(tree, lists, engine=None, policy=None, kernel=None):
    """Same-level cell-to-cell interactions for every node with partners.

    Work is split per SplitPolicy over each node's partner list; chunk
    tasks fill disjoint rows of the node's staging buffer and a single
    ordered np.sum merges them, so digests match across any tasks-per-
    kernel and worker count.
    """
    if policy is None:
        policy = SplitPolicy(1)
    if kernel is None:
        kernel = m2l_components
    pair_count = sum(len(v) for v in lists.same_level.values()) // 2
    items = sorted(lists.same_level.items())
    n = tree.n_edge
    merges = []
    staged_bytes = 0
    for key, partners in items:
        node = tree.nodes[key]
        tc = node.expansion.center.reshape(3, -1)
        staged = np.zeros((len(partners), 20, tc.shape[1]))

        def merge(node=node, staged=staged):
            node.expansion.coeffs += np.sum(staged, axis=0).reshape(20, n, n, n)

        if engine is None:
            _m2l_partner_rows(tree, tc, partners, staged, 0, len(partners), kernel)
            merge()
            continue
        done = engine.launch_split_kernel(
            len(partners), policy,
            lambda start, stop, tc=tc, partners=partners, staged=staged:
                _m2l_partner_rows(tree, tc, partners, staged, start, stop, kernel))
        merges.append(engine.then(done, lambda _r, merge=merge: merge()))
        # bound live staging memory: drain before allocating past the budget
        staged_bytes += staged.nbytes
        if staged_bytes > _M2L_STAGE_BUDGET:
            engine.when_all(merges).result()
            merges, staged_bytes = [], 0
    if engine is not None and merges:
        engine.when_all(merges).result()
    return pair_count


# ----------------------------------------------------------------------
# L2L downsweep and evaluation
# ----------------------------------------------------------------------

def l2l_shift(coeffs, s):
    """Re-center packed expansion coefficients by displacement s (3, ...)."""
    sx, sy, sz = s[0], s[1], s[2]
    L0 = coeffs[0]
    L1x, L1y, L1z = coeffs[1], coeffs[2], coeffs[3]
    Lxx, Lxy, Lxz, Lyy, Lyz, Lzz = (coeffs[4 + p] for p in range(6))
    (Txxx, Txxy, Txxz, Txyy, Txyz, Txzz,
     Tyyy, Tyyz, Tyzz, Tzzz) = (coeffs[10 + p] for p in range(10))

    out = np.empty((20,) + np.broadcast(coeffs[0], sx).shape)
    # third-order scalar contraction with symmetric multiplicities
    osss = (Txxx * sx * sx * sx + Tyyy * sy * sy * sy + Tzzz * sz * sz * sz
            + 3.0 * (Txxy * sx * sx * sy + Txxz * sx * sx * sz
                     + Txyy * sx * sy * sy + Txzz * sx * sz * sz
                     + Tyyz * sy * sy * sz + Tyzz * sy * sz * sz)
            + 6.0 * Txyz * sx * sy * sz)
    out[0] = (L0 + L1x * sx + L1y * sy + L1z * sz
              + 0.5 * (Lxx * sx * sx + Lyy * sy * sy + Lzz * sz * sz
                       + 2.0 * (Lxy * sx * sy + Lxz * sx * sz + Lyz * sy * sz))
              + (1.0 / 6.0) * osss)
    out[1] = (L1x + Lxx * sx + Lxy * sy + Lxz * sz
              + 0.5 * (Txxx * sx * sx + Txyy * sy * sy + Txzz * sz * sz
                       + 2.0 * (Txxy * sx * sy + Txxz * sx * sz + Txyz * sy * sz)))
    out[2] = (L1y + Lxy * sx + Lyy * sy + Lyz * sz
              + 0.5 * (Txxy * sx * sx + Tyyy * sy * sy + Tyzz * sz * sz
                       + 2.0 * (Txyy * sx * sy + Txyz * sx * sz + Tyyz * sy * sz)))
    out[3] = (L1z + Lxz * sx + Lyz * sy + Lzz * sz
              + 0.5 * (Txxz * sx * sx + Tyyz * sy * sy + Tzzz * sz * sz
                       + 2.0 * (Txyz * sx * sy + Txzz * sx * sz + Tyzz * sy * sz)))
    out[4] = Lxx + Txxx * sx + Txxy * sy + Txxz * sz
    out[5] = Lxy + Txxy * sx + Txyy * sy + Txyz * sz
    out[6] = Lxz + Txxz * sx + Txyz * sy + Txzz * sz
    out[7] = Lyy + Txyy * sx + Tyyy * sy + Tyyz * sz
    out[8] = Lyz + Txyz * sx + Tyyz * sy + Tyzz * sz
    out[9] = Lzz + Txzz * sx + Tyzz * sy + Tzzz * sz
    out[10:] = coeffs[10:]
    return out


def _push_to_children(tree, parent):
    """Shift parent cell expansions to the 8 fine cells each one covers."""
    n = tree.n_edge
    h = n // 2
    for c, child in enumerate(parent.children):
        ox, oy, oz = c & 1, (c >> 1) & 1, (c >> 2) & 1
        blk = (slice(ox * h, (ox + 1) * h),
               slice(oy * h, (oy + 1) * h),
               slice(oz * h, (oz + 1) * h))
        pc = parent.expansion.coeffs[(slice(None),) + blk]     # (20, h, h, h)
        pcen = parent.expansion.center[(slice(None),) + blk]   # (3, h, h, h)
        # expand each parent cell onto its 2x2x2 fine block
        pc_f = np.repeat(np.repeat(np.repeat(pc, 2, axis=1), 2, axis=2), 2, axis=3)
        pcen_f = np.repeat(np.repeat(np.repeat(pcen, 2, axis=1), 2, axis=2), 2, axis=3)
        s = child.expansion.center - pcen_f
        child.expansion.coeffs += l2l_shift(pc_f, s)


def init_expansions(tree):
    n = tree.n_edge
    stack = [tree.root]
    while stack:
        node = stack.pop()
        node.expansion = Expansion(coeffs=np.zeros((20, n, n, n)),
                                   center=node.moments.com.copy())
        if not node.is_leaf:
            stack.extend(node.children)


def l2l_downsweep_and_evaluate(tree, engine=None):
    """Top-down expansion push, then leaf evaluation phi = L0, g = -L1."""
    levels = _nodes_by_level(tree)
    for level in sorted(levels):
        parents = [nd for nd in levels[level] if not nd.is_leaf]
        if engine is None:
            for nd in parents:
                _push_to_children(tree, nd)
        elif parents:
            engine.when_all(
                [engine.submit(_push_to_children, tree, nd) for nd in parents]
            ).result()

    def finish(leaf):
        if not np.all(np.isfinite(leaf.expansion.coeffs[:4])):
            raise SolverFailure("non-finite expansion after downsweep")
        leaf.phi = leaf.expansion.coeffs[0].copy()
        leaf.gacc = -leaf.expansion.coeffs[1:4]

    leaves = tree.leaves()
    if engine is None:
        for leaf in leaves:
            finish(leaf)
    else:
        engine.when_all([engine.submit(finish, lf) for lf in leaves]).result()


# ----------------------------------------------------------------------
# P2P
# ----------------------------------------------------------------------

def _p2p_accumulate(phi, g, tpos, spos, smass, same_node):
    """Add exact Newtonian sums from sources onto targets, in place.

    Targets are processed in fixed-size blocks; each block sums its full
    source axis at once, so results do not depend on the block size.
    """
    S = spos.shape[1]
    for lo in range(0, tpos.shape[1], _P2P_TARGET_BLOCK):
        hi = min(lo + _P2P_TARGET_BLOCK, tpos.shape[1])
        d = tpos[:, lo:hi, None] - spos[:, None, :]
        r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
        if same_node:
            ir = np.zeros_like(r2)
            np.divide(1.0, np.sqrt(r2), out=ir, where=r2 > 0.0)
        else:
            if not np.all(r2 > 0.0):
                raise SolverFailure("coincident cell centers in p2p")
            ir = 1.0 / np.sqrt(r2)
        mir = smass[None, :] * ir
        phi[lo:hi] -= np.sum(mir, axis=1)
        mir3 = mir * ir * ir
        g[0, lo:hi] -= np.sum(mir3 * d[0], axis=1)
        g[1, lo:hi] -= np.sum(mir3 * d[1], axis=1)
        g[2, lo:hi] -= np.sum(mir3 * d[2], axis=1)


def p2p_phase(tree, lists, engine=None):
    """Direct Newton for every leaf: its own cells plus its p2p partners."""
    pair_count = sum(len(v) for v in lists.p2p.values()) // 2

    def work(leaf):
        tpos = leaf.moments.com.reshape(3, -1)
        phi = np.zeros(tpos.shape[1])
        g = np.zeros((3, tpos.shape[1]))
        _p2p_accumulate(phi, g, tpos, tpos, leaf.moments.m.reshape(-1), True)
        for key in lists.p2p.get(leaf.key(), ()):
            src = tree.nodes[key].moments
            _p2p_accumulate(phi, g, tpos, src.com.reshape(3, -1),
                            src.m.reshape(-1), False)
        n = tree.n_edge
        leaf.phi += phi.reshape(n, n, n)
        leaf.gacc += g.reshape(3, n, n, n)

    leaves = tree.leaves()
    if engine is None:
        for leaf in leaves:
            work(leaf)
    else:
        engine.when_all([engine.submit(work, lf) for lf in leaves]).result()
    return pair_count


# ----------------------------------------------------------------------
# orchestration
# ----------------------------------------------------------------------

def solve_gravity(tree, engine=None, policy=None, kernel=None) -> GravityReport:
    """Full solve: upsweep, same-level M2L, downsweep, p2p.

    Must be called from the orchestration layer (it joins phase futures).
    Leaves end up with .phi and .gacc per cell.
    """
    report = GravityReport()
    t0 = time.perf_counter()
    m2m_upsweep(tree, engine)
    t1 = time.perf_counter()
    lists = build_interaction_lists(tree)
    init_expansions(tree)
    t2 = time.perf_counter()
    report.m2l_pairs = m2l_phase(tree, lists, engine, policy, kernel)
    t3 = time.perf_counter()
    l2l_downsweep_and_evaluate(tree, engine)
    t4 = time.perf_counter()
    report.p2p_pairs = p2p_phase(tree, lists, engine)
    t5 = time.perf_counter()
    report.timings = {"m2m": t1 - t0, "lists": t2 - t1, "m2l": t3 - t2,
                      "l2l": t4 - t3, "p2p": t5 - t4}
    return report


# ----------------------------------------------------------------------
# direct-summation oracle
# ----------------------------------------------------------------------

def direct_sum_oracle(masses, positions):
    """Exact O(n^2) Newtonian phi and g at every input position, G = 1.

    Self-interaction excluded.  Duplicate positions are rejected since the
    potential is undefined there.
    """
    masses = np.asarray(masses, dtype=float)
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise ValueError("positions must be (n, 3)")
    if len(np.unique(positions, axis=0)) != len(positions):
        raise ValueError("duplicate positions")
    n = len(masses)
    phi = np.zeros(n)
    g = np.zeros((n, 3))
    for lo in range(0, n, _P2P_TARGET_BLOCK):
        hi = min(lo + _P2P_TARGET_BLOCK, n)
        d = positions[lo:hi, None, :] - positions[None, :, :]
        r2 = np.sum(d * d, axis=2)
        ir = np.zeros_like(r2)
        np.divide(1.0, np.sqrt(r2), out=ir, where=r2 > 0.0)
        mir = masses[None, :] * ir
        phi[lo:hi] = -np.sum(mir, axis=1)
        g[lo:hi] = -np.sum((mir * ir * ir)[:, :, None] * d, axis=1)
    return phi, g


def tree_monopoles(tree):
    """All leaf-cell monopoles of a solved or unsolved tree, flattened in
    Morton leaf order: (masses, positions (k,3))."""
    ms, ps = [], []
    for leaf in tree.leaves():
        if leaf.moments is None:
            leaf.moments = p2m(tree, leaf)
        ms.append(leaf.moments.m.reshape(-1))
        ps.append(leaf.moments.com.reshape(3, -1).T)
    return np.concatenate(ms), np.concatenate(ps, axis=0)
