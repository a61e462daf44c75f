"""Label spreading over account-pair features with an RBF kernel.

Each pair is one sample.  With affinity ``A`` (zero diagonal) and
``S = D^{-1/2} A D^{-1/2}`` the iteration ``F <- a S F + (1 - a) Y``
converges to ``(1 - a)(I - a S)^{-1} Y``; ``a`` is ``SpreadConfig.clamp``.
Two affinities share that model:

``knn`` (default)
    RBF weights kept only between each pair and its ``knn`` nearest
    neighbours, symmetrised as ``(W + W^T) / 2``.  Neighbours are exact up
    to ``exact_knn_limit`` pairs; beyond that the search is restricted to a
    k-means cell of about ``cell_size`` pairs (an inverted-file index), which
    keeps the cost linear in the pair count.
``full``
    the complete RBF affinity.  Up to ``pair_budget`` pairs it is a dense
    matrix (8000 pairs is about 0.5 GB of float64).  Larger scalar problems (Katz features) apply it on a grid
    (binned convolution, see :class:`_GridAffinity`); larger vector problems
    fall back to ``knn`` with a warning.

``affinity="auto"`` picks ``full`` for scalar features and ``knn`` for
vectors.  ``sigma="auto"`` follows the affinity: the global median pair
distance for ``full``, and for ``knn`` a local scale, the median distance
from a pair to its ``knn``-th nearest neighbour.  With a few hundred
negative pairs per positive in embedding space the full affinity lets the
negative mass win everywhere, so argmax would predict no positives; the
neighbour graph keeps the vote local.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numba
import numpy as np
from scipy.ndimage import convolve1d
from sklearn.cluster import KMeans

from .errors import ConfigError, DataError
from .pairs import LABEL_NEG, LABEL_POS, LABEL_UNKNOWN, PairDataset, PairFeatures, triu_pairs

log = logging.getLogger(__name__)


@dataclass
class SpreadConfig:
    sigma: Union[str, float] = "auto"
    clamp: float = 0.2
    tol: float = 1e-6
    max_iter: int = 1000
    pair_budget: int = 8000
    knn: int = 10
    exact_knn_limit: int = 50_000
    cell_size: int = 512
    chunk: int = 65536
    seed: int = 0
    affinity: str = "auto"

    def __post_init__(self):
        if not 0 < self.clamp < 1:
            raise ConfigError("clamp must lie in (0, 1)")
        if self.sigma not in ("auto", "median"):
            try:
                ok = float(self.sigma) > 0
            except (TypeError, ValueError):
                ok = False
            if not ok:
                raise ConfigError("sigma must be positive, 'auto' or 'median'")
            self.sigma = float(self.sigma)
        if self.affinity not in ("auto", "knn", "full"):
            raise ConfigError(f"affinity must be auto, knn or full, not {self.affinity!r}")
        if self.tol <= 0 or self.max_iter < 1:
            raise ConfigError("tol must be positive and max_iter >= 1")
        if self.knn < 1 or self.cell_size < 2:
            raise ConfigError("knn must be >= 1 and cell_size >= 2")


@dataclass
class SpreadResult:
    prob: np.ndarray
    labels: np.ndarray
    converged: bool
    n_iter: int
    method: str
    sigma: float
    info: dict = field(default_factory=dict)
    score: Optional[np.ndarray] = None  # log-odds log F1 - log F0, same order as prob
    mass: Optional[np.ndarray] = None  # the converged (n, 2) class mass F


def _sq_dist(X, Y):
    d2 = np.einsum("ij,ij->i", X, X)[:, None] + np.einsum("ij,ij->i", Y, Y)[None, :]
    d2 -= 2.0 * (X @ Y.T)
    return np.maximum(d2, 0.0, out=d2)


def rbf_affinity(X: np.ndarray, sigma: float, zero_diagonal: bool = True) -> np.ndarray:
    """Dense ``exp(-||x_i - x_j||^2 / (2 sigma^2))``."""
    if not sigma > 0:
        raise ConfigError("sigma must be positive")
    X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
    a = np.exp(-_sq_dist(X, X) / (2.0 * sigma * sigma))
    if zero_diagonal:
        np.fill_diagonal(a, 0.0)
    return a


def median_pair_distance(data: PairDataset, max_samples: int = 2000, seed: int = 0) -> float:
    """Median Euclidean distance between pair feature vectors (sampled)."""
    n = len(data)
    idx = np.arange(n)
    if n > max_samples:
        idx = np.sort(np.random.default_rng(seed).choice(n, max_samples, replace=False))
    X = np.asarray(data.features(data.left[idx], data.right[idx]), dtype=np.float64)
    iu = np.triu_indices(X.shape[0], 1)
    return float(np.sqrt(np.median(_sq_dist(X, X)[iu]))) if iu[0].size else 0.0


def _one_hot(labels: np.ndarray) -> np.ndarray:
    y = np.zeros((labels.size, 2))
    y[labels == LABEL_NEG, 0] = 1.0
    y[labels == LABEL_POS, 1] = 1.0
    return y


def _finish(F: np.ndarray, labels: np.ndarray, log_space: bool = False):
    """Probability of class 1, hard labels and the log-odds ranking score.

    Far from every label the probability can underflow to 0 while the
    log-odds still order the pairs, so rankings use the latter.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        L = F if log_space else np.log(F)
    tot = np.logaddexp(L[:, 0], L[:, 1])
    ok = np.isfinite(tot)
    prob = np.zeros(F.shape[0])
    prob[ok] = np.exp(L[ok, 1] - tot[ok])
    np.clip(prob, 0.0, 1.0, out=prob)
    with np.errstate(invalid="ignore"):
        score = L[:, 1] - L[:, 0]
    score[~ok] = 0.0  # no mass at all: no evidence either way
    score[np.isnan(score)] = 0.0
    np.clip(score, -1e300, 1e300, out=score)
    hard = (L[:, 1] > L[:, 0]).astype(np.int8)
    known = labels != LABEL_UNKNOWN
    hard[known] = labels[known]
    return prob, hard, score


def _check_labels(labels: np.ndarray):
    if not np.any(labels != LABEL_UNKNOWN):
        raise DataError("no labelled pairs: nothing to spread")
    if not np.any(labels == LABEL_POS) or not np.any(labels == LABEL_NEG):
        raise DataError("labelled pairs contain a single class; spreading is degenerate")


def _iterate(S, Y, clamp, tol, max_iter):
    F = Y.copy()
    base = (1.0 - clamp) * Y
    for it in range(1, max_iter + 1):
        F_new = clamp * (S @ F) + base
        delta = np.max(np.abs(F_new - F)) if F.size else 0.0
        F = F_new
        if delta < tol:
            return F, True, it
    return F, False, max_iter


def normalise(a: np.ndarray) -> np.ndarray:
    """``D^{-1/2} A D^{-1/2}``; rows with zero degree stay zero."""
    deg = a.sum(axis=1)
    inv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return a * inv[:, None] * inv[None, :]


def closed_form(S: np.ndarray, labels: np.ndarray, clamp: float) -> np.ndarray:
    """Fixed point ``(1 - a)(I - a S)^{-1} Y`` by a direct solve."""
    Y = _one_hot(np.asarray(labels))
    return (1.0 - clamp) * np.linalg.solve(np.eye(S.shape[0]) - clamp * S, Y)


def _dense_normalised(X, sigma, chunk=1024):
    """``normalise(rbf_affinity(X, sigma))`` built in place, one row block at a time.

    The n x n matrix is the only large allocation, which is what bounds the
    dense budget.
    """
    X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
    n = len(X)
    sq = np.einsum("ij,ij->i", X, X)
    S = np.empty((n, n))
    scale = -1.0 / (2.0 * sigma * sigma)
    for s in range(0, n, chunk):
        blk = S[s:s + chunk]
        np.dot(X[s:s + chunk], X.T, out=blk)
        blk *= -2.0
        blk += sq[s:s + chunk, None]
        blk += sq[None, :]
        np.maximum(blk, 0.0, out=blk)
        blk *= scale
        np.exp(blk, out=blk)
    np.fill_diagonal(S, 0.0)
    deg = S.sum(axis=1)
    inv = np.zeros(n)
    np.divide(1.0, np.sqrt(deg), out=inv, where=deg > 0)
    S *= inv[:, None]
    S *= inv[None, :]
    return S


def _spread_dense(data, labels, sigma, cfg):
    S = _dense_normalised(data.X, sigma)
    return _iterate(S, _one_hot(labels), cfg.clamp, cfg.tol, cfg.max_iter)


# -- nearest-neighbour graph -------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _block_topk(G, sq_rows, sq_cols, row0, k, members, idx_out, d2_out):
    """k smallest ``|x_i|^2 + |x_j|^2 - 2 G_ij`` per row, skipping ``j == row0 + i``."""
    nb, m = G.shape
    val = np.empty(k, dtype=np.float32)
    ind = np.empty(k, dtype=np.int64)
    for i in range(nb):
        me = row0 + i
        cnt = 0
        thr = np.float32(np.inf)
        for j in range(m):
            v = sq_cols[j] - np.float32(2.0) * G[i, j]
            if v >= thr or j == me:
                continue
            if cnt < k:
                p = cnt
                cnt += 1
            else:
                p = k - 1
            while p > 0 and val[p - 1] > v:
                val[p] = val[p - 1]
                ind[p] = ind[p - 1]
                p -= 1
            val[p] = v
            ind[p] = j
            if cnt == k:
                thr = val[k - 1]
        for t in range(k):
            if t < cnt:
                idx_out[i, t] = members[ind[t]]
                d2_out[i, t] = max(val[t] + sq_rows[i], np.float32(0.0))
            else:
                idx_out[i, t] = -1
                d2_out[i, t] = np.inf


def _assign(data, rows, centres, chunk):
    out = np.empty(rows.size, dtype=np.int32)
    c_sq = np.einsum("ij,ij->i", centres, centres)
    for s in range(0, rows.size, chunk):
        r = rows[s:s + chunk]
        X = np.asarray(data.features(data.left[r], data.right[r]), dtype=np.float32)
        out[s:s + chunk] = np.argmin(c_sq[None, :] - 2.0 * (X @ centres.T), axis=1)
    return out


def _kmeans(X, k, seed):
    km = KMeans(n_clusters=k, init="random", n_init=1, max_iter=20, random_state=seed)
    return km.fit(X).cluster_centers_.astype(np.float32)


def cell_index(data: PairDataset, cell_size: int, seed: int = 0,
               chunk: int = 65536) -> np.ndarray:
    """Two-level k-means cell id per pair, about ``cell_size`` pairs per cell.

    The second level splits each coarse cell into at most ``ceil(m / m1)``
    parts, so dense coarse cells keep larger cells (more neighbour
    candidates where pairs crowd together).
    """
    n = len(data)
    m = max(1, math.ceil(n / cell_size))
    if m == 1:
        return np.zeros(n, dtype=np.int32)
    rng = np.random.default_rng(seed)
    m1 = max(2, int(round(math.sqrt(m))))
    m2 = math.ceil(m / m1)
    every = np.arange(n, dtype=np.int32 if n < 2**31 else np.int64)
    sample = np.sort(rng.choice(n, size=min(n, 200 * m1), replace=False))
    Xs = np.asarray(data.features(data.left[sample], data.right[sample]), dtype=np.float32)
    top = _assign(data, every, _kmeans(Xs, m1, seed), chunk)
    del every
    cell = np.empty(n, dtype=np.int32)
    base = 0
    for c in range(m1):
        mem = np.flatnonzero(top == c)
        k2 = max(1, min(m2, math.ceil(mem.size / cell_size)))
        if k2 == 1 or mem.size <= k2:
            cell[mem] = base
            base += 1
            continue
        sub = mem if mem.size <= 200 * k2 else np.sort(rng.choice(mem, 200 * k2, replace=False))
        Xs = np.asarray(data.features(data.left[sub], data.right[sub]), dtype=np.float32)
        cell[mem] = base + _assign(data, mem, _kmeans(Xs, k2, seed), chunk)
        base += k2
    return cell


def knn_graph(data: PairDataset, k: int, exact_limit: int = 50_000, cell_size: int = 512,
              seed: int = 0, chunk: int = 65536, block_elems: int = 1 << 24):
    """``(idx, d2)``: the ``k`` nearest pairs of every pair and squared distances.

    Missing neighbours (cells smaller than ``k + 1``) are ``-1`` / ``inf``.
    Rows are sorted by distance.
    """
    n = len(data)
    k = max(1, min(k, n - 1))
    if n <= exact_limit:
        order = np.arange(n)
        bounds = np.array([0, n])
    else:
        cell = cell_index(data, cell_size, seed, chunk)
        order = np.argsort(cell, kind="stable")
        counts = np.bincount(cell)
        del cell
        bounds = np.concatenate(([0], np.cumsum(counts[counts > 0])))
    idx = np.empty((n, k), dtype=np.int32)
    d2 = np.empty((n, k), dtype=np.float32)
    for a, b in zip(bounds[:-1], bounds[1:]):
        mem = order[a:b]
        X = np.asarray(data.features(data.left[mem], data.right[mem]), dtype=np.float32)
        sq = np.einsum("ij,ij->i", X, X)
        step = max(1, block_elems // max(1, mem.size))
        for s in range(0, mem.size, step):
            e = min(mem.size, s + step)
            G = X[s:e] @ X.T
            ii = np.empty((e - s, k), dtype=np.int64)
            dd = np.empty((e - s, k), dtype=np.float32)
            _block_topk(G, sq[s:e], sq, s, k, mem, ii, dd)
            idx[mem[s:e]] = ii
            d2[mem[s:e]] = dd
    return idx, d2


def knn_matrix(idx: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Dense ``(W + W^T) / 2`` from neighbour lists (for small checks)."""
    n = idx.shape[0]
    a = np.zeros((n, n))
    rows = np.repeat(np.arange(n), idx.shape[1])
    ok = idx.ravel() >= 0
    np.add.at(a, (rows[ok], idx.ravel()[ok]), 0.5 * w.ravel()[ok])
    return a + a.T


@numba.njit(cache=True, nogil=True)
def _knn_iterate(idx, w, labels, clamp, tol, max_iter):
    n, k = idx.shape
    deg = np.zeros(n)
    for i in range(n):
        for t in range(k):
            j = idx[i, t]
            if j >= 0:
                h = 0.5 * w[i, t]
                deg[i] += h
                deg[j] += h
    inv = np.zeros(n)
    for i in range(n):
        if deg[i] > 0:
            inv[i] = 1.0 / np.sqrt(deg[i])
    F = np.zeros((n, 2))
    for i in range(n):
        if labels[i] >= 0:
            F[i, labels[i]] = 1.0
    G = np.empty_like(F)
    for it in range(1, max_iter + 1):
        G[:] = 0.0
        for i in range(n):
            for t in range(k):
                j = idx[i, t]
                if j < 0:
                    continue
                c = 0.5 * w[i, t] * inv[i] * inv[j]
                G[i, 0] += c * F[j, 0]
                G[i, 1] += c * F[j, 1]
                G[j, 0] += c * F[i, 0]
                G[j, 1] += c * F[i, 1]
        delta = 0.0
        for i in range(n):
            y = labels[i]
            for c2 in range(2):
                v = clamp * G[i, c2]
                if y == c2:
                    v += 1.0 - clamp
                dv = abs(v - F[i, c2])
                if dv > delta:
                    delta = dv
                F[i, c2] = v
        if delta < tol:
            return F, True, it
    return F, False, max_iter


@numba.njit(cache=True, nogil=True)
def _sorted_neighbours(xs, k):
    """Neighbour bitmask per sorted value: bit ``o + k`` marks offset ``o``
    (``-k <= o <= k``) as one of the ``k`` nearest values."""
    n = xs.size
    mask = np.zeros(n, dtype=np.uint64)
    kth = np.zeros(n)
    one = np.uint64(1)
    for i in range(n):
        lo = i - 1
        hi = i + 1
        m = np.uint64(0)
        for t in range(k):
            if lo >= 0 and (hi >= n or xs[i] - xs[lo] <= xs[hi] - xs[i]):
                m |= one << np.uint64(lo - i + k)
                kth[i] = xs[i] - xs[lo]
                lo -= 1
            elif hi < n:
                m |= one << np.uint64(hi - i + k)
                kth[i] = xs[hi] - xs[i]
                hi += 1
        mask[i] = m
    return mask, kth


@numba.njit(cache=True, inline="always")
def _log_weight(xs, mask, i, j, k, scale):
    """log of the symmetrised weight ``(W_ij + W_ji) / 2``; -inf if not linked."""
    one = np.uint64(1)
    mult = 0.0
    if (mask[i] >> np.uint64(j - i + k)) & one:
        mult += 0.5
    if (mask[j] >> np.uint64(i - j + k)) & one:
        mult += 0.5
    if mult == 0.0:
        return -np.inf
    d = xs[i] - xs[j]
    return np.log(mult) - d * d * scale


@numba.njit(cache=True, nogil=True)
def _iterate_1d(xs, mask, labels, k, scale, clamp, tol, max_iter):
    """Spreading on the sorted-order kNN graph, carried out in log space.

    Along a one-dimensional chain the spread mass decays geometrically with
    the hop count and would underflow to exactly zero far from the labels,
    tying most pairs at probability 0; logs keep the ordering.  Returns the
    log mass per class.
    """
    n = xs.size
    logdeg = np.full(n, -np.inf)
    for i in range(n):
        mx = -np.inf
        for j in range(max(0, i - k), min(n, i + k + 1)):
            if j != i:
                mx = max(mx, _log_weight(xs, mask, i, j, k, scale))
        if mx == -np.inf:
            continue
        acc = 0.0
        for j in range(max(0, i - k), min(n, i + k + 1)):
            if j != i:
                acc += np.exp(_log_weight(xs, mask, i, j, k, scale) - mx)
        logdeg[i] = mx + np.log(acc)
    la = np.log(clamp)
    lb = np.log(1.0 - clamp)
    L = np.full((n, 2), -np.inf)
    for i in range(n):
        if labels[i] >= 0:
            L[i, labels[i]] = 0.0
    new = np.empty_like(L)
    ls = np.empty(2 * k + 1)
    for it in range(1, max_iter + 1):
        delta = 0.0
        for i in range(n):
            lo = max(0, i - k)
            hi = min(n, i + k + 1)
            for j in range(lo, hi):
                if j == i or logdeg[i] == -np.inf or logdeg[j] == -np.inf:
                    ls[j - lo] = -np.inf
                else:
                    ls[j - lo] = (_log_weight(xs, mask, i, j, k, scale)
                                  - 0.5 * (logdeg[i] + logdeg[j]))
            for c in range(2):
                mx = -np.inf
                for j in range(lo, hi):
                    v = ls[j - lo] + L[j, c]
                    if v > mx:
                        mx = v
                if labels[i] == c:
                    base = lb
                    mx = max(mx, base)
                else:
                    base = -np.inf
                if mx == -np.inf:
                    v = -np.inf
                else:
                    acc = 0.0
                    for j in range(lo, hi):
                        acc += np.exp(ls[j - lo] + L[j, c] - mx + la)
                    if base > -np.inf:
                        acc += np.exp(base - mx)
                    v = mx + np.log(acc)
                old = L[i, c]
                dv = abs((np.exp(v) if v > -np.inf else 0.0)
                         - (np.exp(old) if old > -np.inf else 0.0))
                if dv > delta:
                    delta = dv
                new[i, c] = v
        L, new = new, L
        if delta < tol:
            return L, True, it
    return L, False, max_iter


def _positive_scale(kth: np.ndarray) -> float:
    """Median k-th neighbour distance, ignoring exact ties if it is zero."""
    kth = kth[np.isfinite(kth)]
    if not kth.size:
        return 0.0
    med = float(np.median(kth))
    if med == 0.0 and np.any(kth > 0):
        med = float(np.median(kth[kth > 0]))
    return med


def _spread_1d(data, labels, sigma, cfg):
    """Exact k-nearest-neighbour spreading for scalar features, in sorted order."""
    n = len(data)
    k = max(1, min(cfg.knn, n - 1, 31))
    x = np.empty(n)
    for sl, X in data.feature_chunks(cfg.chunk):
        x[sl] = np.asarray(X, dtype=np.float64).reshape(-1)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    del x
    mask, kth = _sorted_neighbours(xs, k)
    if sigma is None:
        sigma = _positive_scale(kth) or 1.0
    del kth
    L, converged, it = _iterate_1d(xs, mask, labels[order].astype(np.int64), k,
                                   1.0 / (2.0 * sigma * sigma), cfg.clamp, cfg.tol,
                                   cfg.max_iter)
    out = np.empty_like(L)
    out[order] = L
    return out, converged, it, sigma


def _spread_knn(data, labels, sigma, cfg):
    if data.dim == 1:
        return _spread_1d(data, labels, sigma, cfg) + (True,)
    idx, d2 = knn_graph(data, cfg.knn, cfg.exact_knn_limit, cfg.cell_size, cfg.seed, cfg.chunk)
    if sigma is None:
        sigma = _positive_scale(np.sqrt(d2[:, -1])) or 1.0
    # weights overwrite the distances in place to keep the peak footprint down
    w = d2
    w *= np.float32(-1.0 / (2.0 * sigma * sigma))
    np.exp(w, out=w)
    w[idx < 0] = 0.0
    F, converged, it = _knn_iterate(idx, w, labels.astype(np.int8), cfg.clamp, cfg.tol,
                                    cfg.max_iter)
    return F, converged, it, sigma, False


class _GridAffinity:
    """Full RBF affinity (zero diagonal) for scalar features, applied on a grid.

    Values are linearly binned onto a uniform grid with ``taps`` points per
    ``sigma``, the binned mass is convolved with the kernel truncated at
    ``truncate`` sigma (a direct, exactly summed convolution), and the result
    is interpolated back.  The self term the binning introduces is removed
    exactly, so ``A @ v`` matches the dense product up to the
    ``O((h / sigma)^2)`` binning error.
    """

    def __init__(self, x: np.ndarray, sigma: float, taps: int = 32, truncate: float = 8.0,
                 max_grid: int = 1 << 22):
        lo, hi = float(x.min()), float(x.max())
        span = hi - lo
        size = int(min(max_grid, max(2, math.ceil(span / sigma * taps) + 1)))
        h = span / (size - 1) if span > 0 else 1.0
        # fractional grid position, split into cell index and offset in place
        fr = x - lo
        fr /= h
        self.i0 = np.minimum(np.floor(fr), max(size - 2, 0)).astype(np.int32)
        fr -= self.i0
        self.fr = fr
        half = int(min(size - 1, math.ceil(truncate * sigma / h)))
        self.kernel = np.exp(-0.5 * (np.arange(-half, half + 1) * (h / sigma)) ** 2)
        self.k1 = math.exp(-0.5 * (h / sigma) ** 2)
        self.size = size
        self.h = h

    def apply(self, v: np.ndarray, out: np.ndarray) -> np.ndarray:
        g = _grid_bin(self.i0, self.fr, v, self.size)
        c = convolve1d(g, self.kernel, mode="constant")
        _grid_interp(self.i0, self.fr, c, v, self.k1, out)
        return out

    def __matmul__(self, v: np.ndarray) -> np.ndarray:
        v = np.ascontiguousarray(v, dtype=np.float64)
        return self.apply(v, np.empty_like(v))


@numba.njit(cache=True, nogil=True)
def _grid_bin(i0, fr, v, size):
    g = np.zeros(size)
    for i in range(i0.size):
        g[i0[i]] += (1.0 - fr[i]) * v[i]
        g[i0[i] + 1] += fr[i] * v[i]
    return g


@numba.njit(cache=True, nogil=True)
def _grid_interp(i0, fr, c, v, k1, out):
    for i in range(i0.size):
        f = fr[i]
        self_term = (1.0 - f) * (1.0 - f) + f * f + 2.0 * f * (1.0 - f) * k1
        r = c[i0[i]] * (1.0 - f) + c[i0[i] + 1] * f - self_term * v[i]
        out[i] = r if r > 0.0 else 0.0


@numba.njit(cache=True, nogil=True)
def _scaled(inv, f, out):
    for i in range(f.size):
        out[i] = inv[i] * f[i]


@numba.njit(cache=True, nogil=True)
def _grid_update(f, inv, av, labels, cls, clamp):
    """One Jacobi step for class ``cls`` in place; returns the max change."""
    delta = 0.0
    for i in range(f.size):
        v = clamp * inv[i] * av[i]
        if labels[i] == cls:
            v += 1.0 - clamp
        d = abs(v - f[i])
        if d > delta:
            delta = d
        f[i] = v
    return delta


def _spread_grid(data, labels, sigma, cfg):
    n = len(data)
    x = np.empty(n)
    for sl, X in data.feature_chunks(cfg.chunk):
        x[sl] = np.asarray(X, dtype=np.float64).reshape(-1)
    A = _GridAffinity(x, sigma)  # takes over x's buffer
    del x
    tmp = np.ones(n)
    deg = A @ tmp
    inv = np.zeros_like(deg)
    np.divide(1.0, np.sqrt(deg), out=inv, where=deg > 1e-300)
    del deg
    # classes are independent, so each column is updated in place
    F = np.zeros((2, n))
    F[0, labels == LABEL_NEG] = 1.0
    F[1, labels == LABEL_POS] = 1.0
    av = np.empty(n)
    labels = labels.astype(np.int8)
    for it in range(1, cfg.max_iter + 1):
        delta = 0.0
        for c in range(2):
            _scaled(inv, F[c], tmp)
            A.apply(tmp, av)
            delta = max(delta, _grid_update(F[c], inv, av, labels, c, cfg.clamp))
        if delta < cfg.tol:
            return F.T, True, it
    return F.T, False, cfg.max_iter


def label_spread(data: PairDataset, cfg: Optional[SpreadConfig] = None) -> SpreadResult:
    """Spread the 1/0 pair labels to the ``-1`` pairs.

    Returns the probability of label 1 (``F_1 / (F_0 + F_1)``) and hard
    labels (argmax; labelled pairs keep their label).
    """
    cfg = cfg or SpreadConfig()
    labels = np.asarray(data.labels, dtype=np.int8)
    _check_labels(labels)
    n = len(data)
    affinity = cfg.affinity
    if affinity == "auto":
        affinity = "full" if data.dim == 1 else "knn"
    method = "knn"
    if affinity == "full":
        if n <= cfg.pair_budget:
            method = "dense"
        elif data.dim == 1:
            method = "grid"
        else:
            warnings.warn(f"{n} pairs exceed the dense budget {cfg.pair_budget}; "
                          f"using a {cfg.knn}-nearest-neighbour affinity", RuntimeWarning,
                          stacklevel=2)
    if cfg.sigma == "median" or (cfg.sigma == "auto" and method in ("grid", "dense")):
        sigma = median_pair_distance(data, seed=cfg.seed)
    elif cfg.sigma == "auto":
        sigma = None
    else:
        sigma = float(cfg.sigma)
    if method == "grid":
        if not sigma > 0:
            sigma = 1.0
            log.warning("pair features are (nearly) constant; falling back to sigma=1")
        F, converged, it = _spread_grid(data, labels, sigma, cfg)
        log_space = False
    elif method == "dense":
        if not sigma > 0:
            sigma = 1.0
            log.warning("pair features are (nearly) constant; falling back to sigma=1")
        F, converged, it = _spread_dense(data, labels, sigma, cfg)
        log_space = False
    else:
        if sigma is not None and not sigma > 0:
            sigma = 1.0
        F, converged, it, sigma, log_space = _spread_knn(data, labels, sigma, cfg)
    if not converged:
        warnings.warn(f"label spreading stopped at max_iter={cfg.max_iter} before tol",
                      RuntimeWarning, stacklevel=2)
    prob, hard, score = _finish(F, labels, log_space)
    if log_space:
        F = np.exp(F)
    return SpreadResult(prob, hard, converged, it, method, float(sigma), score=score, mass=F)


def assemble_pairs(accounts: Sequence[str], features: PairFeatures,
                   labels: Union[Mapping[tuple[str, str], int], np.ndarray, None] = None,
                   pairs: Optional[tuple[np.ndarray, np.ndarray]] = None) -> PairDataset:
    """Canonical ``u < v`` pairs with features and merged labels.

    ``pairs`` restricts the candidates (default: all pairs of ``accounts``).
    ``labels`` is either an array aligned with the pairs or a mapping from
    account-id pairs to 1/0; unspecified pairs get -1.
    """
    accounts = tuple(accounts)
    if pairs is None:
        left, right = triu_pairs(len(accounts))
    else:
        left, right = (np.asarray(a, dtype=np.int32) for a in pairs)
        lo, hi = np.minimum(left, right), np.maximum(left, right)
        left, right = lo, hi
    if labels is None:
        lab = np.full(left.size, LABEL_UNKNOWN, dtype=np.int8)
    elif isinstance(labels, np.ndarray):
        if labels.shape != left.shape:
            raise DataError("label array does not match the pair list")
        lab = labels.astype(np.int8)
    else:
        idx = {a: i for i, a in enumerate(accounts)}
        canon: dict[tuple[int, int], int] = {}
        for (u, v), y in labels.items():
            i, j = idx[u], idx[v]
            key = (min(i, j), max(i, j))
            if key in canon and canon[key] != y:
                raise DataError(f"conflicting labels for pair ({u!r}, {v!r})")
            canon[key] = int(y)
        lab = np.fromiter((canon.get((i, j), LABEL_UNKNOWN)
                           for i, j in zip(left.tolist(), right.tolist())),
                          dtype=np.int8, count=left.size)
    return PairDataset(accounts, left, right, lab, features).validate()
