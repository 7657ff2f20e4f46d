"""Minimum average direct-flip (MDF) distance and the bounds built on it.

All MDF values in the package go through ``_mean_point_distance`` so that
the indexed search, brute force and registration cost produce bit-identical
numbers for the same pair, whatever the batch shape.
"""
import numpy as np
from numba import njit

_PAIR_CHUNK = 1 << 12  # pairs per chunk in pairwise_mdf, sized for cache


def _check_same_m(u, w):
    if u.shape[-2] != w.shape[-2]:
        raise ValueError("streamlines resampled to different m (%d vs %d)"
                         % (u.shape[-2], w.shape[-2]))


def _planar_mean_distance(u, w):
    """Kernel on coordinate-major arrays: ``u``, ``w`` are (3, m, ...)."""
    # Elementwise only, so a pair's result does not depend on batching.
    # Points are summed in mirrored pairs d[i] + d[m-1-i]: reversing both
    # streamlines (or swapping them under a flip) maps every pair onto
    # itself, which makes symmetry and orientation invariance bit-exact.
    dist = u[0] - w[0]
    dist *= dist
    tmp = u[1] - w[1]
    tmp *= tmp
    dist += tmp
    np.subtract(u[2], w[2], out=tmp)
    tmp *= tmp
    dist += tmp
    np.sqrt(dist, out=dist)
    m = dist.shape[0]
    if m == 1:
        return dist[0].copy()
    acc = dist[0] + dist[m - 1]
    for i in range(1, m // 2):
        acc += dist[i] + dist[m - 1 - i]
    if m % 2:
        acc += dist[m // 2]
    return acc / m


def _planar(x):
    """(..., m, 3) -> (3, m, ...) view."""
    return np.moveaxis(x, (-1, -2), (0, 1))


def _mean_point_distance(u, w):
    return _planar_mean_distance(_planar(u), _planar(w))


def mdf_direct(u, w):
    """Mean point-wise Euclidean distance of two same-orientation streamlines."""
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    _check_same_m(u, w)
    return float(_mean_point_distance(u, w))


def mdf(u, w):
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    _check_same_m(u, w)
    return float(min(_mean_point_distance(u, w), _mean_point_distance(u, w[::-1])))


def paired_mdf(u, w, direct_only=False):
    """Row-wise MDF of two (n, m, 3) stacks: ``out[i] = mdf(u[i], w[i])``."""
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    _check_same_m(u, w)
    d = _mean_point_distance(u, w)
    if not direct_only:
        np.minimum(d, _mean_point_distance(u, w[..., ::-1, :]), out=d)
    return d


def centroid_lower_bound(u, w):
    """Distance between centroids; never exceeds ``mdf_direct(u, w)``."""
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    _check_same_m(u, w)
    return float(np.linalg.norm(u.mean(axis=0) - w.mean(axis=0)))


def flat_distance(u, w):
    """Euclidean distance of the flattened ``3m`` coordinate vectors.

    ``flat / m <= mdf_direct <= flat / sqrt(m)``.
    """
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    _check_same_m(u, w)
    return float(np.linalg.norm((u - w).ravel()))


def to_planar(streamlines):
    """(n, m, 3) -> contiguous coordinate-major (3, m, n) copy."""
    return np.ascontiguousarray(_planar(np.asarray(streamlines, dtype=float)))


def pairwise_planar(a_p, b_p, b_flip_p=None):
    """Pairwise MDF on coordinate-major inputs from :func:`to_planar`.

    ``b_flip_p`` is ``b_p[:, ::-1]`` (contiguous); when omitted only the
    direct orientation is measured.
    """
    n, k = a_p.shape[2], b_p.shape[2]
    out = np.empty((n, k))
    if n == 0 or k == 0:
        return out
    cols = min(k, _PAIR_CHUNK)
    rows = max(1, _PAIR_CHUNK // cols)
    for c0 in range(0, k, cols):
        b_blk = b_p[:, :, None, c0:c0 + cols]
        f_blk = None if b_flip_p is None else b_flip_p[:, :, None, c0:c0 + cols]
        for r0 in range(0, n, rows):
            a_blk = a_p[:, :, r0:r0 + rows, None]
            d = _planar_mean_distance(a_blk, b_blk)
            if f_blk is not None:
                np.minimum(d, _planar_mean_distance(a_blk, f_blk), out=d)
            out[r0:r0 + rows, c0:c0 + cols] = d
    return out


def pairwise_mdf(a, b, direct_only=False):
    """MDF between every streamline of ``a`` (n, m, 3) and ``b`` (k, m, 3).

    Returns an (n, k) array.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_same_m(a, b)
    b_p = to_planar(b)
    b_flip = None if direct_only else np.ascontiguousarray(b_p[:, ::-1])
    return pairwise_planar(to_planar(a), b_p, b_flip)


@njit(cache=True, nogil=True, inline="always")
def _point_dist(a, b, i, j, p, m, flipped):
    q = m - 1 - p if flipped else p
    dx = a[i, p, 0] - b[j, q, 0]
    dy = a[i, p, 1] - b[j, q, 1]
    dz = a[i, p, 2] - b[j, q, 2]
    return np.sqrt(dx * dx + dy * dy + dz * dz)


@njit(cache=True, nogil=True)
def _nearest_both_ways(a, b):
    # row[i] = min_j mdf(a_i, b_j), col[j] = min_i mdf(a_i, b_j). A pair is
    # abandoned once its running sum shows it cannot lower either minimum.
    n, m, k = a.shape[0], a.shape[1], b.shape[0]
    row = np.full(n, np.inf)
    col = np.full(k, np.inf)
    for i in range(n):
        for j in range(k):
            limit = max(row[i], col[j]) * m
            best = np.inf
            for flipped in range(2):
                # same mirrored-pair order as _planar_mean_distance
                s = 0.0
                for p in range(m - m // 2):
                    r = m - 1 - p
                    if r != p:
                        s += (_point_dist(a, b, i, j, p, m, flipped)
                              + _point_dist(a, b, i, j, r, m, flipped))
                    else:
                        s += _point_dist(a, b, i, j, p, m, flipped)
                    if s > limit:
                        break
                if s <= limit:
                    d = s / m
                    if d < best:
                        best = d
                    limit = min(limit, s)
            if best < row[i]:
                row[i] = best
            if best < col[j]:
                col[j] = best
    return row, col


def bundle_cost(moving, static):
    """Symmetric mean-of-minimum MDF between two streamline sets.

    ``0.5 * (mean_i min_j mdf(moving_i, static_j) + mean_j min_i mdf(...))``.
    """
    moving = np.ascontiguousarray(moving, dtype=float)
    static = np.ascontiguousarray(static, dtype=float)
    if len(moving) == 0 or len(static) == 0:
        raise ValueError("bundle_cost needs two non-empty streamline sets")
    _check_same_m(moving, static)
    row, col = _nearest_both_ways(moving, static)
    return float(0.5 * (row.mean() + col.mean()))
