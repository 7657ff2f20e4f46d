"""Exact MDF radius search over a tractogram.

The index stores every streamline twice (direct and reversed), so a query
only has to be compared with ``mdf_direct`` against the entries: the smaller
of the two orientation hits is the MDF. Entries are organized in a K-D tree
over their flattened ``3m`` coordinates. A node keeps the per-point bounding
boxes of its entries, and the mean over points of the query-point to box
distance is a lower bound of ``mdf_direct`` to every entry below it. That
bound, the centroid bound and the flattened-norm bound are all sound, so
the result is the brute-force result, only cheaper.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .core import DEFAULT_POINTS, DegenerateStreamlineError, resample
from .distance import _check_same_m, _mean_point_distance, pairwise_planar, to_planar

logger = logging.getLogger(__name__)

LEAF_SIZE = 32
# Relative slack on pruning tests: bounds are evaluated in floating point and
# must never discard a pair whose exact distance is <= radius.
_BOUND_SLACK = 1e-9
_BRUTE_QUERY_BLOCK = 64


@dataclass(frozen=True)
class MatchSet:
    """Matched (query, target) pairs, sorted by (query_id, target_id)."""
    query_ids: np.ndarray
    target_ids: np.ndarray
    distances: np.ndarray

    def __len__(self):
        return len(self.query_ids)

    def pairs(self):
        return set(zip(self.query_ids.tolist(), self.target_ids.tolist()))

    def as_dict(self):
        return {(int(q), int(t)): float(d)
                for q, t, d in zip(self.query_ids, self.target_ids, self.distances)}

    def sorted_by_distance(self):
        """Rows ``(query_id, target_id, distance)`` ordered by query then distance."""
        order = np.lexsort((self.target_ids, self.distances, self.query_ids))
        return [(int(self.query_ids[i]), int(self.target_ids[i]), float(self.distances[i]))
                for i in order]


def _collapse(qids, tids, dists):
    qids = np.asarray(qids, dtype=np.int64)
    tids = np.asarray(tids, dtype=np.int64)
    dists = np.asarray(dists, dtype=float)
    if len(qids) == 0:
        return MatchSet(qids, tids, dists)
    order = np.lexsort((dists, tids, qids))
    qids, tids, dists = qids[order], tids[order], dists[order]
    first = np.ones(len(qids), dtype=bool)
    first[1:] = (qids[1:] != qids[:-1]) | (tids[1:] != tids[:-1])
    return MatchSet(qids[first], tids[first], dists[first])


def min_distance_map(matches: MatchSet) -> dict:
    """Smallest distance per matched target over all queries."""
    out = {}
    for t, d in zip(matches.target_ids.tolist(), matches.distances.tolist()):
        if t not in out or d < out[t]:
            out[t] = d
    return out


class FssIndex:
    """Immutable K-D tree over resampled streamlines in both orientations.

    Build with :func:`build_index`.
    """

    def __init__(self, m, entries, entry_ids, entry_flipped, node_lo, node_hi,
                 node_start, node_stop, node_left, node_right, n_streamlines,
                 degenerate_ids=()):
        self.m = int(m)
        self.entries = entries
        self.entry_ids = entry_ids
        self.entry_flipped = entry_flipped
        self.entry_centroids = entries.mean(axis=1)
        self.node_lo = node_lo
        self.node_hi = node_hi
        self.node_start = node_start
        self.node_stop = node_stop
        self.node_left = node_left
        self.node_right = node_right
        self.n_streamlines = int(n_streamlines)
        self.degenerate_ids = tuple(degenerate_ids)
        sel = np.nonzero(~entry_flipped)[0]
        self._direct_pos = sel[np.argsort(entry_ids[sel], kind="stable")]
        for arr in (entries, entry_ids, entry_flipped, node_lo, node_hi, node_start,
                    node_stop, node_left, node_right, self.entry_centroids, self._direct_pos):
            arr.setflags(write=False)

    def __len__(self):
        return len(self.entries)

    @property
    def n_nodes(self):
        return len(self.node_start)

    def direct_streamlines(self):
        """Resampled streamlines in input orientation, ``(ids, (k, m, 3))``."""
        pos = self._direct_positions()
        ids = self.entry_ids[pos]
        return ids, self.entries[pos]

    def resampled(self, ids):
        """Input-orientation resampled streamlines for the given IDs."""
        pos = self._direct_positions()
        sorted_ids = self.entry_ids[pos]
        ids = np.asarray(ids, dtype=np.int64)
        at = np.searchsorted(sorted_ids, ids)
        if np.any(at >= len(sorted_ids)) or np.any(sorted_ids[np.minimum(at, len(pos) - 1)] != ids):
            raise KeyError("streamline ids not in index")
        return self.entries[pos[at]]

    def _direct_positions(self):
        return self._direct_pos

    def to_bytes(self):
        head = struct.pack("<4q", self.m, len(self.entries), self.n_nodes, self.n_streamlines)
        parts = [head]
        for arr, dt in ((self.entries, "<f8"), (self.entry_ids, "<i8"),
                        (self.entry_flipped, "u1"), (self.node_lo, "<f8"),
                        (self.node_hi, "<f8"), (self.node_start, "<i8"),
                        (self.node_stop, "<i8"), (self.node_left, "<i8"),
                        (self.node_right, "<i8")):
            parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
        return b"".join(parts)


def _build_tree(flat, leaf_size):
    """Return (permutation, start, stop, left, right) arrays in preorder."""
    n = flat.shape[0]
    perm = np.arange(n)
    start, stop, left, right = [], [], [], []
    stack = [(0, n, -1, 0)]  # (start, stop, parent, is_right)
    while stack:
        lo_i, hi_i, parent, is_right = stack.pop()
        node = len(start)
        start.append(lo_i)
        stop.append(hi_i)
        left.append(-1)
        right.append(-1)
        if parent >= 0:
            (right if is_right else left)[parent] = node
        if hi_i - lo_i <= leaf_size:
            continue
        block = flat[perm[lo_i:hi_i]]
        spread = block.max(axis=0) - block.min(axis=0)
        dim = int(np.argmax(spread))
        if spread[dim] == 0.0:
            continue  # all entries identical: cannot split
        order = np.argsort(block[:, dim], kind="stable")
        perm[lo_i:hi_i] = perm[lo_i:hi_i][order]
        mid = lo_i + (hi_i - lo_i) // 2
        # right pushed first so the left subtree gets the next preorder ids
        stack.append((mid, hi_i, node, 1))
        stack.append((lo_i, mid, node, 0))
    as_i = lambda x: np.asarray(x, dtype=np.int64)  # noqa: E731
    return perm, as_i(start), as_i(stop), as_i(left), as_i(right)


def build_index(streamlines, m=DEFAULT_POINTS, leaf_size=LEAF_SIZE, strict=False):
    """Resample a tractogram and build its search index.

    Parameters
    ----------
    streamlines : sequence of (n, 3) arrays or Tractogram
        Streamline IDs are positions in this sequence.
    m : int
        Resampling point count.
    leaf_size : int
        Maximum entries per leaf.
    strict : bool
        Raise on degenerate streamlines instead of skipping them.

    Returns
    -------
    FssIndex
    """
    streamlines = list(getattr(streamlines, "streamlines", streamlines))
    if not streamlines:
        raise ValueError("cannot build an index over an empty tractogram")
    resampled, ids, bad = [], [], []
    for i, s in enumerate(streamlines):
        try:
            resampled.append(resample(s, m))
            ids.append(i)
        except DegenerateStreamlineError:
            bad.append(i)
    if bad:
        msg = "degenerate streamlines (fewer than 2 distinct points): ids %s" % bad[:20]
        if strict or not resampled:
            raise DegenerateStreamlineError(msg)
        logger.warning("skipping %d %s", len(bad), msg)
    direct = np.stack(resampled)
    flipped = direct[:, ::-1]
    palindromic = np.all(direct == flipped, axis=(1, 2))
    ids = np.asarray(ids, dtype=np.int64)

    entries = np.concatenate([direct, flipped[~palindromic]])
    entry_ids = np.concatenate([ids, ids[~palindromic]])
    entry_flipped = np.concatenate([np.zeros(len(ids), bool),
                                    np.ones(int((~palindromic).sum()), bool)])

    perm, start, stop, left, right = _build_tree(entries.reshape(len(entries), -1), leaf_size)
    entries = np.ascontiguousarray(entries[perm])
    entry_ids = entry_ids[perm]
    entry_flipped = entry_flipped[perm]

    node_lo = np.empty((len(start), m, 3))
    node_hi = np.empty((len(start), m, 3))
    # preorder: children have larger ids than parents, fill bottom-up
    for node in range(len(start) - 1, -1, -1):
        if left[node] < 0:
            block = entries[start[node]:stop[node]]
            node_lo[node] = block.min(axis=0)
            node_hi[node] = block.max(axis=0)
        else:
            np.minimum(node_lo[left[node]], node_lo[right[node]], out=node_lo[node])
            np.maximum(node_hi[left[node]], node_hi[right[node]], out=node_hi[node])

    return FssIndex(m, entries, entry_ids, entry_flipped, node_lo, node_hi,
                    start, stop, left, right, len(streamlines), bad)


def _box_lower_bound(q, lo, hi):
    gap = np.maximum(lo - q, 0.0) + np.maximum(q - hi, 0.0)
    return np.sqrt((gap * gap).sum(axis=-1)).mean(axis=-1)


def _check_queries(idx, queries, radius):
    queries = np.asarray(queries, dtype=float)
    if queries.ndim == 2:
        queries = queries[None]
    if queries.ndim != 3 or queries.shape[2] != 3:
        raise ValueError("queries must be an (n, m, 3) array of resampled streamlines")
    if queries.shape[1] != idx.m:
        raise ValueError("queries resampled to m=%d but index uses m=%d"
                         % (queries.shape[1], idx.m))
    if not radius > 0:
        raise ValueError("radius must be positive, got %r" % radius)
    return queries


def radius_search(idx: FssIndex, queries, radius: float) -> MatchSet:
    """All (query, streamline) pairs with MDF <= radius, with exact distances.

    ``queries`` are already resampled to ``idx.m``; query IDs are their
    positions.
    """
    queries = _check_queries(idx, queries, radius)
    m = idx.m
    loose = radius * (1.0 + _BOUND_SLACK) + _BOUND_SLACK
    q_centroids = queries.mean(axis=1)
    q_flat = queries.reshape(len(queries), -1)
    e_flat = idx.entries.reshape(len(idx.entries), -1)
    hits_q, hits_e, hits_d = [], [], []

    stack = [(0, np.arange(len(queries)))]
    while stack:
        node, active = stack.pop()
        lb = _box_lower_bound(queries[active], idx.node_lo[node], idx.node_hi[node])
        active = active[lb <= loose]
        if len(active) == 0:
            continue
        if idx.node_left[node] >= 0:
            stack.append((idx.node_right[node], active))
            stack.append((idx.node_left[node], active))
            continue
        s0, s1 = idx.node_start[node], idx.node_stop[node]
        cdist = np.linalg.norm(q_centroids[active, None] - idx.entry_centroids[None, s0:s1],
                               axis=-1)
        qa, ea = np.nonzero(cdist <= loose)
        if len(qa) == 0:
            continue
        qa = active[qa]
        ea = ea + s0
        flat = np.linalg.norm(q_flat[qa] - e_flat[ea], axis=-1)
        keep = flat <= m * loose
        qa, ea = qa[keep], ea[keep]
        d = _mean_point_distance(queries[qa], idx.entries[ea])
        within = d <= radius
        hits_q.append(qa[within])
        hits_e.append(ea[within])
        hits_d.append(d[within])

    if not hits_q:
        empty = np.empty(0, dtype=np.int64)
        return MatchSet(empty, empty.copy(), np.empty(0))
    entry_pos = np.concatenate(hits_e)
    return _collapse(np.concatenate(hits_q), idx.entry_ids[entry_pos], np.concatenate(hits_d))


def brute_force_search(targets, queries, radius, target_ids=None) -> MatchSet:
    """All-pairs MDF thresholding without any pruning.

    ``targets`` is an (n, m, 3) array of resampled streamlines; ``target_ids``
    defaults to their positions.
    """
    targets = np.asarray(targets, dtype=float)
    queries = np.asarray(queries, dtype=float)
    if not radius > 0:
        raise ValueError("radius must be positive, got %r" % radius)
    if target_ids is None:
        target_ids = np.arange(len(targets))
    target_ids = np.asarray(target_ids, dtype=np.int64)
    _check_same_m(queries, targets)
    t_p = to_planar(targets)
    t_flip = np.ascontiguousarray(t_p[:, ::-1])
    hits_q, hits_t, hits_d = [], [], []
    for q0 in range(0, len(queries), _BRUTE_QUERY_BLOCK):
        d = pairwise_planar(to_planar(queries[q0:q0 + _BRUTE_QUERY_BLOCK]), t_p, t_flip)
        qi, ti = np.nonzero(d <= radius)
        hits_q.append(qi + q0)
        hits_t.append(target_ids[ti])
        hits_d.append(d[qi, ti])
    if not hits_q:
        empty = np.empty(0, dtype=np.int64)
        return MatchSet(empty, empty.copy(), np.empty(0))
    return _collapse(np.concatenate(hits_q), np.concatenate(hits_t), np.concatenate(hits_d))
