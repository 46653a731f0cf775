"""Simulated multi-locality ghost exchange.

Localities model separate address spaces inside one process.  Leaves are
assigned to contiguous Morton slabs; every ghost fill whose source leaf
lives on another locality travels as an explicit serialized message over
a per-(sender, receiver) channel with strictly increasing, gapless
sequence numbers.  Same-locality fills either take the very same message
path (local_opt off) or a direct memory copy gated by a per-exchange
readiness token (local_opt on).  Both paths move identical float64
images, so the toggle never changes simulation state.

The exchange runs in two phases.  Phase A serves same-level faces,
fine-to-coarse faces (source-side 2:1 block-mean restriction), and the
physical domain boundary.  Phase B serves coarse-to-fine faces by
source-side limited prolongation; the source needs its own ghosts for
the slopes, so phase B runs after phase A has been applied everywhere,
in ascending destination-level rounds (a coarse source's own missing
coarse ghosts are then always one round ahead).
"""

import logging
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ReadinessViolation, SolverFailure
from .grid import (FACES, GHOST, Coarser, DomainBoundary, SameLevel,
                   child_offset, face_neighbor)
from .hydro import minmod, reflect_slab

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CommConfig:
    localities: int = 1
    local_opt: bool = False

    def __post_init__(self):
        if self.localities < 1:
            raise ConfigError("localities must be >= 1")


@dataclass(frozen=True)
class GhostMessage:
    sender: int
    receiver: int
    dst_key: tuple          # destination leaf (level, index)
    face: int
    part: tuple             # () whole slab, (b1, b2) tangential quarter
    payload: bytes          # little-endian float64, field-major
    seq: int


@dataclass
class DistributionMap:
    owner: dict             # leaf key -> locality
    localities: int
    counts: list

    def locality_of(self, key):
        loc = self.owner.get(key)
        if loc is None:
            raise SolverFailure(f"leaf {key} is not in the distribution map; "
                                "the tree changed after partitioning")
        return loc


def slab_sizes(n_items, localities):
    """Contiguous slab lengths: floor/ceil of n/L, differing by at most 1."""
    return [(loc + 1) * n_items // localities - loc * n_items // localities
            for loc in range(localities)]


def partition(tree, localities):
    """Contiguous Morton slabs of leaves, sizes differing by at most one."""
    if localities < 1:
        raise ConfigError("localities must be >= 1")
    keys = [leaf.key() for leaf in tree.leaves()]
    n = len(keys)
    owner = {}
    counts = slab_sizes(n, localities)
    pos = 0
    for loc, size in enumerate(counts):
        for key in keys[pos:pos + size]:
            owner[key] = loc
        pos += size
    if min(counts, default=1) == 0:
        log.warning("partition: %d localities for %d leaves leaves some "
                    "localities empty", localities, n)
    return DistributionMap(owner=owner, localities=localities, counts=counts)


# ------------------------------------------------------------------
# payload codec and slab operators
# ------------------------------------------------------------------

def serialize_slab(slab):
    return np.ascontiguousarray(slab).astype("<f8", copy=False).tobytes()


def deserialize_slab(payload, shape):
    return np.frombuffer(payload, dtype="<f8").reshape(shape)


def restrict2(arr):
    """2:1 block-mean over the three spatial dims of (F, 2a, 2b, 2c)."""
    f, a, b, c = arr.shape
    r = arr.reshape(f, a // 2, 2, b // 2, 2, c // 2, 2)
    return 0.125 * np.sum(r, axis=(2, 4, 6))


def _limited_slopes(grid):
    """Per-axis minmod slopes for every cell; needs all six ghosts."""
    out = np.empty((3,) + grid.cells.shape)
    n, g = grid.n_edge, GHOST
    for axis in range(3):
        pad = grid.padded(axis)
        sl = [slice(None)] * 4
        def win(lo):
            s = list(sl)
            s[1 + axis] = slice(lo, lo + n)
            return pad[tuple(s)]
        mid = win(g)
        out[axis] = minmod(mid - win(g - 1), win(g + 1) - mid)
    return out


def prolong_face_slab(tree, src_leaf, face, octant, slope_cache):
    """Fine ghost slab for a fine leaf's `face` whose neighbor is the
    coarser `src_leaf`: one coarse layer, limited linear profile, each of
    the 8 sub-cells offset by a quarter cell along each axis (the offsets
    cancel pairwise so the coarse mean is preserved)."""
    axis, side = face // 2, face % 2
    n = tree.n_edge
    m = n // 2
    key = src_leaf.key()
    slopes = slope_cache.get(key)
    if slopes is None:
        slopes = slope_cache[key] = _limited_slopes(src_leaf.grid)
    t1, t2 = (a for a in range(3) if a != axis)
    layer = n - 1 if side == 0 else 0
    lsl = [slice(None)] * 4
    lsl[1 + axis] = layer
    b1, b2 = octant[t1], octant[t2]
    qsl = list(lsl)
    qsl[1 + t1] = slice(b1 * m, b1 * m + m)
    qsl[1 + t2] = slice(b2 * m, b2 * m + m)
    qsl = tuple(qsl)
    c = src_leaf.grid.cells[qsl]
    sn = slopes[axis][qsl]
    s1 = slopes[t1][qsl]
    s2 = slopes[t2][qsl]
    fine = np.empty((c.shape[0], 2, n, n))
    for r in (0, 1):
        for i1 in (0, 1):
            for i2 in (0, 1):
                fine[:, r, i1::2, i2::2] = (c + (r - 0.5) * 0.5 * sn
                                            + (i1 - 0.5) * 0.5 * s1
                                            + (i2 - 0.5) * 0.5 * s2)
    # dims are (F, axis, t1, t2); put the spatial dims back in x,y,z order
    pos = {axis: 1, t1: 2, t2: 3}
    return np.transpose(fine, (0, pos[0], pos[1], pos[2]))


def _part_region(face, part, n):
    """Slicer into a ghost-slab buffer for one message part."""
    if part == ():
        return (slice(None),) * 4
    axis = face // 2
    t1, t2 = (a for a in range(3) if a != axis)
    b1, b2 = part
    m = n // 2
    sl = [slice(None)] * 4
    sl[1 + t1] = slice(b1 * m, b1 * m + m)
    sl[1 + t2] = slice(b2 * m, b2 * m + m)
    return tuple(sl)


# ------------------------------------------------------------------
# fabric: channels, sequence numbers, readiness, counters
# ------------------------------------------------------------------

@dataclass
class CommStats:
    messages: int = 0
    bytes: int = 0
    fast_path_copies: int = 0
    exchanges: int = 0
    last_exchange_messages: int = 0
    last_exchange_bytes: int = 0
    max_exchange_messages: int = 0
    max_exchange_bytes: int = 0


class CommFabric:
    """Message channels between simulated localities plus the same-locality
    fast path.  Single-threaded by construction: sends and drains happen
    inside exchange_ghosts; the readiness tokens reproduce the ordering
    contract a threaded transport would need."""

    def __init__(self, config):
        self.config = config
        self._channels = {}
        self._send_seq = {}
        self._recv_seq = {}
        self._ready = {}
        self._stage = 0
        self.stats = CommStats()

    # -- lifecycle ---------------------------------------------------

    def begin_exchange(self):
        self._stage += 1
        self._exchange_messages = 0
        self._exchange_bytes = 0
        return self._stage

    def end_exchange(self):
        for (s, r), q in self._channels.items():
            if q:
                raise SolverFailure(f"{len(q)} undelivered ghost messages on "
                                    f"channel {s}->{r} at exchange end")
        st = self.stats
        st.exchanges += 1
        st.last_exchange_messages = self._exchange_messages
        st.last_exchange_bytes = self._exchange_bytes
        st.max_exchange_messages = max(st.max_exchange_messages,
                                       self._exchange_messages)
        st.max_exchange_bytes = max(st.max_exchange_bytes,
                                    self._exchange_bytes)

    def publish_readiness(self, leaf_key):
        self._ready[leaf_key] = self._stage

    # -- the two transports -------------------------------------------

    def send(self, sender, receiver, dst_key, face, part, slab):
        chan = (sender, receiver)
        seq = self._send_seq.get(chan, 0) + 1
        self._send_seq[chan] = seq
        payload = serialize_slab(slab)
        msg = GhostMessage(sender, receiver, dst_key, face, part, payload, seq)
        self._channels.setdefault(chan, deque()).append(msg)
        self.stats.messages += 1
        self.stats.bytes += len(payload)
        self._exchange_messages += 1
        self._exchange_bytes += len(payload)

    def local_fast_path(self, dmap, src_key, dst_key, fill):
        """Direct ghost fill between same-locality leaves; `fill()` performs
        the copy once the gate passes."""
        if dmap.locality_of(src_key) != dmap.locality_of(dst_key):
            raise SolverFailure(f"fast path refused: {src_key} and {dst_key} "
                                "live on different localities")
        if self._ready.get(src_key) != self._stage:
            raise ReadinessViolation(
                f"fast-path read from {src_key} before it published boundary "
                f"readiness for exchange {self._stage}")
        fill()
        self.stats.fast_path_copies += 1

    def drain(self, receiver):
        """All pending messages for one locality, per-channel FIFO order,
        senders in ascending order; validates gapless sequence numbers."""
        out = []
        for chan in sorted(c for c in self._channels if c[1] == receiver):
            q = self._channels[chan]
            while q:
                msg = q.popleft()
                expected = self._recv_seq.get(chan, 0) + 1
                if msg.seq != expected:
                    raise SolverFailure(
                        f"ghost message sequence gap on channel "
                        f"{chan[0]}->{chan[1]}: got {msg.seq}, want {expected}")
                self._recv_seq[chan] = msg.seq
                out.append(msg)
        return out

    # -- stats ---------------------------------------------------------

    def comm_stats(self):
        return replace(self.stats)

    def reset_stats(self):
        self.stats = CommStats()


# ------------------------------------------------------------------
# the exchange
# ------------------------------------------------------------------

class _FaceBuffer:
    __slots__ = ("array", "pending")

    def __init__(self, shape):
        self.array = np.empty(shape)
        self.pending = set()


def _facing_children(tree, interior, face):
    """The four leaf children of `interior` adjacent to the shared face,
    with their tangential offset bits."""
    axis, side = face // 2, face % 2
    t1, t2 = (a for a in range(3) if a != axis)
    out = []
    for c in range(8):
        off = child_offset(c)
        if off[axis] != 1 - side:
            continue
        cidx = tuple(2 * interior.index[a] + off[a] for a in range(3))
        child = tree.nodes[(interior.level + 1, cidx)]
        if not child.is_leaf:
            raise SolverFailure("tree is not 2:1 balanced across a face")
        out.append((child, (off[t1], off[t2])))
    return out


def _route(fabric, dmap, config, buffers, src_node, dst_node, face, part, slab):
    dst_key = dst_node.key()
    src_key = src_node.key()
    entry = buffers[(dst_key, face)]
    if part not in entry.pending:
        raise SolverFailure(f"duplicate ghost contribution {part} for "
                            f"{dst_key} face {face}")
    s_loc = dmap.locality_of(src_key)
    d_loc = dmap.locality_of(dst_key)
    region = _part_region(face, part, dst_node.grid.n_edge)
    if config.local_opt and s_loc == d_loc:
        def fill():
            entry.array[region] = slab
        fabric.local_fast_path(dmap, src_key, dst_key, fill)
        entry.pending.discard(part)
    else:
        fabric.send(s_loc, d_loc, dst_key, face, part, slab)


def _drain_and_apply(fabric, dmap, buffers, leaves_by_key):
    for receiver in range(dmap.localities):
        for msg in fabric.drain(receiver):
            entry = buffers.get((msg.dst_key, msg.face))
            if entry is None or msg.part not in entry.pending:
                raise SolverFailure(f"unexpected ghost message for "
                                    f"{msg.dst_key} face {msg.face} part "
                                    f"{msg.part}")
            region = _part_region(msg.face, msg.part,
                                  leaves_by_key[msg.dst_key].grid.n_edge)
            entry.array[region] = deserialize_slab(
                msg.payload, entry.array[region].shape)
            entry.pending.discard(msg.part)


def _install(buffers, leaves_by_key):
    for (dst_key, face), entry in buffers.items():
        if entry.pending:
            raise SolverFailure(f"ghost slab for {dst_key} face {face} is "
                                f"missing contributions {entry.pending} after "
                                "the exchange barrier")
        leaves_by_key[dst_key].grid.set_ghost(face, entry.array)


def exchange_ghosts(tree, dmap, config, fabric=None):
    """Fill every leaf's six ghost slabs from step-consistent cell data."""
    if fabric is None:
        fabric = CommFabric(config)
    fabric.begin_exchange()
    leaves = tree.leaves()
    leaves_by_key = {leaf.key(): leaf for leaf in leaves}
    for leaf in leaves:
        fabric.publish_readiness(leaf.key())

    buffers = {}
    deferred = []
    for dst in leaves:
        for face in FACES:
            nb = face_neighbor(tree, dst, face)
            if isinstance(nb, DomainBoundary):
                slab = reflect_slab(np.array(dst.grid.boundary_slab(face)),
                                    face // 2)
                dst.grid.set_ghost(face, slab)
            elif isinstance(nb, SameLevel) and nb.node.is_leaf:
                entry = buffers.setdefault(
                    (dst.key(), face), _FaceBuffer(dst.grid.ghost_shape(face)))
                entry.pending.add(())
                slab = np.asarray(nb.node.grid.boundary_slab(face ^ 1))
                _route(fabric, dmap, config, buffers, nb.node, dst, face, (),
                       slab)
            elif isinstance(nb, SameLevel):
                entry = buffers.setdefault(
                    (dst.key(), face), _FaceBuffer(dst.grid.ghost_shape(face)))
                kids = _facing_children(tree, nb.node, face)
                for child, bits in kids:
                    entry.pending.add(bits)
                for child, bits in kids:
                    fine = np.asarray(
                        child.grid.boundary_slab(face ^ 1, depth=2 * GHOST))
                    _route(fabric, dmap, config, buffers, child, dst, face,
                           bits, restrict2(fine))
            elif isinstance(nb, Coarser):
                deferred.append((dst, face, nb))
            else:
                raise SolverFailure(f"unhandled neighbor kind {nb!r}")
    _drain_and_apply(fabric, dmap, buffers, leaves_by_key)
    _install(buffers, leaves_by_key)

    # coarse-to-fine rounds, shallowest destinations first: a source's own
    # coarse-side ghosts are then complete before its slopes are taken
    slope_cache = {}
    for level in sorted({dst.level for dst, _f, _nb in deferred}):
        buffers = {}
        for dst, face, nb in deferred:
            if dst.level != level:
                continue
            entry = buffers.setdefault(
                (dst.key(), face), _FaceBuffer(dst.grid.ghost_shape(face)))
            entry.pending.add(())
            slab = prolong_face_slab(tree, nb.node, face, nb.octant,
                                     slope_cache)
            _route(fabric, dmap, config, buffers, nb.node, dst, face, (), slab)
        _drain_and_apply(fabric, dmap, buffers, leaves_by_key)
        _install(buffers, leaves_by_key)

    fabric.end_exchange()
    return fabric


def make_exchange_fn(dmap, config, fabric):
    """The exchange closure the hydro stepper calls once per stage."""
    def exchange(tree):
        exchange_ghosts(tree, dmap, config, fabric)
    return exchange
