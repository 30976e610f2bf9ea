"""Hot inner loops, each in a numba and a pure-numpy flavour.

The public names (``radius_pairs``, ``knn_indices``, ``segment_sum``,
``line_graph_pairs``, ``closest_unbonded_pair``) dispatch to the numba
versions unless ``SIAMDIFF_DISABLE_NUMBA`` is set to a truthy value or
numba cannot be imported. Both flavours are always importable under the
``*_numba`` / ``*_numpy`` names so they can be cross-checked and benchmarked.
"""
import os

import numpy as np

try:
    import numba as nb
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None

_flag = os.environ.get("SIAMDIFF_DISABLE_NUMBA", "").strip().lower()
USING_NUMBA = nb is not None and _flag not in ("1", "true", "yes", "on")


def _njit(fn):
    if nb is None:  # pragma: no cover
        return fn
    return nb.njit(cache=True, nogil=True)(fn)


# --------------------------------------------------------------------------
# radius neighbours
# --------------------------------------------------------------------------

@_njit
def _radius_pairs_nb(coords, cutoff):
    n = coords.shape[0]
    c2 = cutoff * cutoff
    count = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = coords[i, 0] - coords[j, 0]
            dy = coords[i, 1] - coords[j, 1]
            dz = coords[i, 2] - coords[j, 2]
            if dx * dx + dy * dy + dz * dz < c2:
                count += 1
    src = np.empty(count, dtype=np.int64)
    dst = np.empty(count, dtype=np.int64)
    k = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = coords[i, 0] - coords[j, 0]
            dy = coords[i, 1] - coords[j, 1]
            dz = coords[i, 2] - coords[j, 2]
            if dx * dx + dy * dy + dz * dz < c2:
                src[k] = i
                dst[k] = j
                k += 1
    return src, dst


def radius_pairs_numba(coords, cutoff):
    return _radius_pairs_nb(np.ascontiguousarray(coords, dtype=np.float64), float(cutoff))


def radius_pairs_numpy(coords, cutoff):
    coords = np.asarray(coords, dtype=np.float64)
    diff = coords[:, None, :] - coords[None, :, :]
    sq = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
    i, j = np.nonzero(np.triu(sq < cutoff * cutoff, k=1))
    return i.astype(np.int64), j.astype(np.int64)


# --------------------------------------------------------------------------
# k nearest neighbours (self excluded, ties -> lower index)
# --------------------------------------------------------------------------

@_njit
def _knn_nb(coords, k):
    n = coords.shape[0]
    kk = min(k, n - 1)
    out = np.empty((n, kk), dtype=np.int64)
    d = np.empty(n, dtype=np.float64)
    for i in range(n):
        for j in range(n):
            dx = coords[i, 0] - coords[j, 0]
            dy = coords[i, 1] - coords[j, 1]
            dz = coords[i, 2] - coords[j, 2]
            d[j] = dx * dx + dy * dy + dz * dz
        d[i] = np.inf
        order = np.argsort(d, kind="mergesort")
        for c in range(kk):
            out[i, c] = order[c]
    return out


def knn_indices_numba(coords, k):
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    if coords.shape[0] < 2:
        return np.empty((coords.shape[0], 0), dtype=np.int64)
    return _knn_nb(coords, int(k))


def knn_indices_numpy(coords, k):
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    if n < 2:
        return np.empty((n, 0), dtype=np.int64)
    diff = coords[:, None, :] - coords[None, :, :]
    sq = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
    np.fill_diagonal(sq, np.inf)
    order = np.argsort(sq, axis=1, kind="stable")
    return order[:, : min(int(k), n - 1)].astype(np.int64)


# --------------------------------------------------------------------------
# scatter-add of rows
# --------------------------------------------------------------------------

@_njit
def _segment_sum_nb(values, index, n):
    out = np.zeros((n, values.shape[1]), dtype=values.dtype)
    for e in range(values.shape[0]):
        r = index[e]
        for c in range(values.shape[1]):
            out[r, c] += values[e, c]
    return out


def segment_sum_numba(values, index, n):
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim == 1:
        return _segment_sum_nb(values[:, None], np.asarray(index, dtype=np.int64), int(n))[:, 0]
    return _segment_sum_nb(values, np.asarray(index, dtype=np.int64), int(n))


def segment_sum_numpy(values, index, n):
    values = np.asarray(values, dtype=np.float64)
    out = np.zeros((int(n),) + values.shape[1:], dtype=np.float64)
    np.add.at(out, np.asarray(index, dtype=np.int64), values)
    return out


# --------------------------------------------------------------------------
# line graph: (i->j, j->k) edge pairs with k != i
# --------------------------------------------------------------------------

@_njit
def _line_graph_nb(src, dst, num_nodes):
    m = src.shape[0]
    start = np.zeros(num_nodes + 1, dtype=np.int64)
    for e in range(m):
        start[src[e] + 1] += 1
    for v in range(num_nodes):
        start[v + 1] += start[v]
    order = np.argsort(src, kind="mergesort")
    count = 0
    for a in range(m):
        j = dst[a]
        for p in range(start[j], start[j + 1]):
            if dst[order[p]] != src[a]:
                count += 1
    ein = np.empty(count, dtype=np.int64)
    eout = np.empty(count, dtype=np.int64)
    c = 0
    for a in range(m):
        j = dst[a]
        for p in range(start[j], start[j + 1]):
            b = order[p]
            if dst[b] != src[a]:
                ein[c] = a
                eout[c] = b
                c += 1
    return ein, eout


def line_graph_pairs_numba(src, dst, num_nodes):
    return _line_graph_nb(np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64), int(num_nodes))


def line_graph_pairs_numpy(src, dst, num_nodes):
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    order = np.argsort(src, kind="stable")
    counts = np.bincount(src, minlength=num_nodes)
    start = np.concatenate([[0], np.cumsum(counts)])
    fan = counts[dst]
    ein = np.repeat(np.arange(src.shape[0], dtype=np.int64), fan)
    offs = np.arange(ein.shape[0]) - np.repeat(np.cumsum(fan) - fan, fan)
    eout = order[start[dst[ein]] + offs]
    keep = dst[eout] != src[ein]
    return ein[keep], eout[keep]


# --------------------------------------------------------------------------
# closest pair not in an exclusion matrix (clash detection)
# --------------------------------------------------------------------------

@_njit
def _closest_unbonded_nb(coords, bonded):
    n = coords.shape[0]
    best = np.inf
    bi = -1
    bj = -1
    for i in range(n):
        for j in range(i + 1, n):
            if bonded[i, j]:
                continue
            dx = coords[i, 0] - coords[j, 0]
            dy = coords[i, 1] - coords[j, 1]
            dz = coords[i, 2] - coords[j, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < best:
                best = d
                bi = i
                bj = j
    return np.sqrt(best), bi, bj


def closest_unbonded_pair_numba(coords, bonded):
    d, i, j = _closest_unbonded_nb(np.ascontiguousarray(coords, dtype=np.float64), np.ascontiguousarray(bonded))
    return float(d), int(i), int(j)


def closest_unbonded_pair_numpy(coords, bonded):
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    diff = coords[:, None, :] - coords[None, :, :]
    sq = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
    sq = np.where(np.triu(~bonded, k=1), sq, np.inf)
    if n < 2 or not np.isfinite(sq).any():
        return float("inf"), -1, -1
    flat = int(np.argmin(sq))
    i, j = divmod(flat, n)
    return float(np.sqrt(sq[i, j])), i, j


if USING_NUMBA:
    radius_pairs = radius_pairs_numba
    knn_indices = knn_indices_numba
    segment_sum = segment_sum_numba
    line_graph_pairs = line_graph_pairs_numba
    closest_unbonded_pair = closest_unbonded_pair_numba
else:
    radius_pairs = radius_pairs_numpy
    knn_indices = knn_indices_numpy
    segment_sum = segment_sum_numpy
    line_graph_pairs = line_graph_pairs_numpy
    closest_unbonded_pair = closest_unbonded_pair_numpy
