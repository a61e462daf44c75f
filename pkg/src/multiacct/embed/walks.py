"""Second-order (p, q) biased random walks.

First-order transitions are drawn in O(1) from per-node alias tables.  The
second-order bias ``1/p`` (return), ``1`` (neighbour of the previous node)
or ``1/q`` (everything else) is then applied by rejection against the
largest of the three factors, which samples the exact node2vec step
distribution without per-edge tables.  Per-edge tables cost
``sum_v deg(v)^2`` memory, which is prohibitive for popular pages.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numba
import numpy as np
import scipy.sparse as sp

from ..errors import ConfigError
from ..graphcore import BipartiteGraph


@dataclass(frozen=True)
class WalkConfig:
    p: float = 0.25
    q: float = 4.0
    num_walks: int = 10
    walk_length: int = 80
    seed: int = 0

    def __post_init__(self):
        if not (self.p > 0 and self.q > 0):
            raise ConfigError("p and q must be positive")
        if self.num_walks < 1 or self.walk_length < 1:
            raise ConfigError("num_walks and walk_length must be >= 1")


@dataclass(frozen=True)
class WalkGraph:
    """CSR view of an undirected weighted graph with sorted neighbour lists."""

    nodes: tuple[str, ...]
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_sparse(cls, adj, nodes: Optional[Sequence[str]] = None) -> "WalkGraph":
        adj = sp.csr_matrix(adj, dtype=np.float64)
        adj.sum_duplicates()
        adj.sort_indices()
        if nodes is None:
            nodes = [str(i) for i in range(adj.shape[0])]
        return cls(tuple(nodes), adj.indptr.astype(np.int64),
                   adj.indices.astype(np.int32), adj.data.astype(np.float64))

    @classmethod
    def from_bipartite(cls, g: BipartiteGraph, weighted: bool = True) -> "WalkGraph":
        return cls.from_sparse(g.adjacency(weighted), g.nodes)

    @property
    def n(self) -> int:
        return len(self.nodes)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def has_edge(self, i: int, j: int) -> bool:
        nb = self.neighbors(i)
        k = np.searchsorted(nb, j)
        return bool(k < nb.size and nb[k] == j)


def step_distribution(g: WalkGraph, prev: Optional[int], cur: int,
                      cfg: WalkConfig) -> tuple[np.ndarray, np.ndarray]:
    """Exact transition probabilities out of ``cur`` given the previous node.

    Returns ``(neighbours, probabilities)``; both empty when ``cur`` is
    isolated.  Without a previous node the step is proportional to weight.
    """
    lo, hi = g.indptr[cur], g.indptr[cur + 1]
    nbrs = g.indices[lo:hi].astype(np.int64)
    w = g.weights[lo:hi].copy()
    if nbrs.size == 0:
        return nbrs, w
    if prev is not None:
        for k, x in enumerate(nbrs):
            if x == prev:
                w[k] /= cfg.p
            elif not g.has_edge(int(prev), int(x)):
                w[k] /= cfg.q
    return nbrs, w / w.sum()


@numba.njit(cache=True)
def _alias_tables(indptr, weights):
    n = indptr.size - 1
    m = weights.size
    accept = np.ones(m)
    alias = np.zeros(m, dtype=np.int32)
    small = np.empty(m, dtype=np.int64)
    large = np.empty(m, dtype=np.int64)
    scaled = np.empty(m)
    for v in range(n):
        lo, hi = indptr[v], indptr[v + 1]
        k = hi - lo
        if k == 0:
            continue
        tot = 0.0
        for e in range(lo, hi):
            tot += weights[e]
        ns = 0
        nl = 0
        for i in range(k):
            scaled[i] = weights[lo + i] * k / tot
            alias[lo + i] = i
            if scaled[i] < 1.0:
                small[ns] = i
                ns += 1
            else:
                large[nl] = i
                nl += 1
        while ns > 0 and nl > 0:
            ns -= 1
            s = small[ns]
            nl -= 1
            l = large[nl]
            accept[lo + s] = scaled[s]
            alias[lo + s] = l
            scaled[l] -= 1.0 - scaled[s]
            if scaled[l] < 1.0:
                small[ns] = l
                ns += 1
            else:
                large[nl] = l
                nl += 1
    return accept, alias


@numba.njit(cache=True, inline="always")
def _splitmix(x):
    x = (x + np.uint64(0x9E3779B97F4A7C15))
    z = x
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x, z ^ (z >> np.uint64(31))


@numba.njit(cache=True, inline="always")
def _uniform(state):
    state, z = _splitmix(state)
    return state, (z >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True)
def _is_neighbor(indptr, indices, a, b):
    lo = indptr[a]
    hi = indptr[a + 1]
    while lo < hi:
        mid = (lo + hi) >> 1
        v = indices[mid]
        if v == b:
            return True
        if v < b:
            lo = mid + 1
        else:
            hi = mid
    return False


@numba.njit(cache=True)
def _walk(indptr, indices, accept, alias, start, length, inv_p, inv_q, bound, state, out):
    out[0] = start
    cur = start
    prev = -1
    for t in range(1, length):
        lo = indptr[cur]
        k = indptr[cur + 1] - lo
        if k == 0:
            for r in range(t, length):
                out[r] = -1
            return
        while True:
            state, u = _uniform(state)
            i = int(u * k)
            if i >= k:
                i = k - 1
            state, u2 = _uniform(state)
            if u2 >= accept[lo + i]:
                i = alias[lo + i]
            nxt = indices[lo + i]
            if prev < 0:
                break
            if nxt == prev:
                bias = inv_p
            elif _is_neighbor(indptr, indices, prev, nxt):
                bias = 1.0
            else:
                bias = inv_q
            state, u3 = _uniform(state)
            if u3 * bound < bias:
                break
        prev = cur
        cur = nxt
        out[t] = cur


@numba.njit(cache=True)
def _walks_serial(indptr, indices, accept, alias, starts, seeds, length, inv_p, inv_q, out):
    bound = max(inv_p, 1.0, inv_q)
    for w in range(starts.size):
        _walk(indptr, indices, accept, alias, starts[w], length, inv_p, inv_q, bound,
              seeds[w], out[w])


@numba.njit(cache=True, parallel=True)
def _walks_parallel(indptr, indices, accept, alias, starts, seeds, length, inv_p, inv_q, out):
    bound = max(inv_p, 1.0, inv_q)
    for w in numba.prange(starts.size):
        _walk(indptr, indices, accept, alias, starts[w], length, inv_p, inv_q, bound,
              seeds[w], out[w])


def walk_seeds(seed: int, n: int) -> np.ndarray:
    return np.random.SeedSequence(seed).generate_state(n, dtype=np.uint64)


def generate_walks(g: WalkGraph, cfg: WalkConfig, workers: int = 1) -> np.ndarray:
    """``num_walks`` walks from every node, as a padded int32 array.

    Row ``r`` is one walk; entries after an early stop (isolated start) are
    ``-1``.  Start order is shuffled per round as in the reference method.
    Each walk has its own RNG stream, so output does not depend on
    ``workers``.
    """
    if g.n == 0:
        return np.empty((0, cfg.walk_length), dtype=np.int32)
    accept, alias = _alias_tables(g.indptr, g.weights)
    rng = np.random.default_rng(cfg.seed)
    starts = np.concatenate([rng.permutation(g.n) for _ in range(cfg.num_walks)]).astype(np.int64)
    seeds = walk_seeds(cfg.seed, starts.size)
    out = np.empty((starts.size, cfg.walk_length), dtype=np.int32)
    fn = _walks_parallel if workers > 1 else _walks_serial
    if workers > 1:
        numba.set_num_threads(min(workers, numba.config.NUMBA_NUM_THREADS))
    fn(g.indptr, g.indices, accept, alias, starts, seeds, cfg.walk_length,
       1.0 / cfg.p, 1.0 / cfg.q, out)
    return out


def walks_as_ids(g: WalkGraph, walks: np.ndarray) -> list[list[str]]:
    return [[g.nodes[i] for i in row if i >= 0] for row in walks]
