"""Spectral clustering of account embeddings to prune the candidate pair space."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as ssla
from sklearn.cluster import KMeans

from .errors import ConfigError, DataError
from .pairs import n_pairs, triu_pairs

log = logging.getLogger(__name__)


@dataclass
class ClusterAssignment:
    accounts: tuple[str, ...]
    labels: np.ndarray

    @property
    def c(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.c)

    def as_dict(self) -> dict[str, int]:
        return dict(zip(self.accounts, self.labels.tolist()))

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["account_id", "cluster"])
            for a, k in zip(self.accounts, self.labels.tolist()):
                w.writerow([a, k])

    @classmethod
    def load(cls, path) -> "ClusterAssignment":
        accounts, labels = [], []
        with open(path, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                accounts.append(row["account_id"])
                labels.append(int(row["cluster"]))
        return cls(tuple(accounts), np.asarray(labels, dtype=np.int64))


def median_distance(x: np.ndarray, max_samples: int = 2000, seed: int = 0) -> float:
    """Median pairwise Euclidean distance, over a row sample when ``x`` is large."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] > max_samples:
        idx = np.random.default_rng(seed).choice(x.shape[0], max_samples, replace=False)
        x = x[np.sort(idx)]
    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    iu = np.triu_indices(x.shape[0], 1)
    med = float(np.sqrt(np.median(np.maximum(d2[iu], 0.0)))) if iu[0].size else 0.0
    return med


def _rbf_affinity(x: np.ndarray, sigma: float, block: int = 2048) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    n = x.shape[0]
    sq = np.einsum("ij,ij->i", x, x)
    out = np.empty((n, n), dtype=np.float32)
    scale = np.float32(-1.0 / (2.0 * sigma * sigma))
    for s in range(0, n, block):
        e = min(n, s + block)
        d2 = sq[s:e, None] + sq[None, :] - 2.0 * (x[s:e] @ x.T)
        np.maximum(d2, 0.0, out=d2)
        d2 *= scale
        np.exp(d2, out=out[s:e])
    np.fill_diagonal(out, 0.0)
    return out


def spectral_cluster(vectors: np.ndarray, accounts, c: int = 3, seed: int = 0,
                     n_init: int = 20, sigma: float | None = None) -> ClusterAssignment:
    """Normalised spectral clustering with an RBF affinity on embeddings.

    The top ``c`` eigenvectors of ``D^{-1/2} A D^{-1/2}`` are row-normalised
    and grouped by seeded k-means++ with ``n_init`` restarts.  Cluster ids
    are renumbered in order of first appearance.
    """
    accounts = tuple(accounts)
    n = len(accounts)
    if c < 1:
        raise ConfigError("cluster count c must be >= 1")
    if c > n:
        raise ConfigError(f"cluster count c={c} exceeds the {n} accounts")
    if c == 1:
        return ClusterAssignment(accounts, np.zeros(n, dtype=np.int64))
    if sigma is None:
        sigma = median_distance(vectors, seed=seed)
    if not sigma > 0:
        raise DataError("embedding vectors are all identical; cannot cluster")
    a = _rbf_affinity(vectors, sigma)
    deg = a.sum(axis=1, dtype=np.float64)
    inv = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1e-300)), 0.0).astype(np.float32)
    a *= inv[:, None]
    a *= inv[None, :]
    if n <= 1500:
        vals, vecs = sla.eigh(a.astype(np.float64), subset_by_index=[n - c, n - 1])
    else:
        v0 = np.random.default_rng(seed).random(n)
        vals, vecs = ssla.eigsh(a, k=c, which="LA", v0=v0, tol=1e-8)
    del a
    order = np.argsort(-vals)
    u = vecs[:, order].astype(np.float64)
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    u = np.divide(u, norms, out=np.zeros_like(u), where=norms > 0)
    km = KMeans(n_clusters=c, init="k-means++", n_init=n_init, random_state=seed)
    raw = km.fit_predict(u)
    _, first = np.unique(raw, return_index=True)
    remap = np.empty(c, dtype=np.int64)
    remap[raw[np.sort(first)]] = np.arange(len(first))
    return ClusterAssignment(accounts, remap[raw])


def candidate_pairs(assignment: ClusterAssignment):
    """Within-cluster account pairs as ``(left, right, cluster)`` index arrays."""
    lefts, rights, comp = [], [], []
    for k in range(assignment.c):
        members = assignment.members(k)
        l, r = triu_pairs(members.size, members)
        lefts.append(l)
        rights.append(r)
        comp.append(np.full(l.size, k, dtype=np.int16))
    if not lefts:
        e = np.empty(0, dtype=np.int32)
        return e, e.copy(), np.empty(0, dtype=np.int16)
    return np.concatenate(lefts), np.concatenate(rights), np.concatenate(comp)


def candidate_count(assignment: ClusterAssignment) -> int:
    return int(sum(n_pairs(int(s)) for s in assignment.sizes()))
