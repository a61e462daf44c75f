"""Katz similarity and the threshold-based pair predictor.

``S = sum_{k>=1} beta^k M^k = (I - beta M)^{-1} - I`` for the graph
adjacency ``M``.  For a bipartite graph the account/account block only
involves even powers, so it can be computed from the biadjacency ``B``
alone as ``(I - beta^2 B B^T)^{-1} - I``; this is what the pipeline uses
when only account pairs matter.
"""

from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ConfigError, DataError
from .graphcore import BipartiteGraph
from .pairs import PairDataset, triu_pairs

log = logging.getLogger(__name__)

DEFAULT_BETA_FRACTION = 0.9
DEFAULT_EPSILON = 1e-6
DENSE_SOLVE_LIMIT = 10000
_MAGIC = b"KATZ0001"


def spectral_norm(m, tol: float = 1e-12, max_iter: int = 100000, seed: int = 0) -> float:
    """Largest singular value of ``m`` by power iteration on ``m^T m``.

    Iterating on ``m^T m`` rather than ``m`` keeps the iteration convergent
    for bipartite adjacencies, whose extreme eigenvalues come in ``+/-``
    pairs.  The stopping rule is a relative change below ``tol`` in the
    Rayleigh quotient.  Returns 0 for the zero matrix.
    """
    n = m.shape[0]
    if n == 0 or (sp.issparse(m) and m.nnz == 0):
        return 0.0
    rng = np.random.default_rng(seed)
    x = rng.random(m.shape[1]) + 0.5
    x /= np.linalg.norm(x)
    lam_prev = -1.0
    lam = 0.0
    for _ in range(max_iter):
        y = m @ x
        z = m.T @ y
        lam = float(x @ z)
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return 0.0
        x = z / nz
        if abs(lam - lam_prev) <= tol * abs(lam):
            break
        lam_prev = lam
    return float(np.sqrt(max(lam, 0.0)))


@dataclass
class SimilarityMatrix:
    """Dense Katz scores.

    ``values`` covers ``nodes``; the first ``n_accounts`` rows are accounts.
    When ``accounts_only`` is set the matrix is just the account block.
    """

    values: np.ndarray
    nodes: tuple[str, ...]
    n_accounts: int
    beta: float
    tol: float
    converged: bool = True
    n_terms: int = 0
    accounts_only: bool = False

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def accounts(self) -> tuple[str, ...]:
        return self.nodes[: self.n_accounts]

    def account_block(self) -> np.ndarray:
        k = self.n_accounts
        return self.values[:k, :k]

    def index(self, node: str) -> int:
        if not hasattr(self, "_idx"):
            self._idx = {a: i for i, a in enumerate(self.nodes)}
        try:
            return self._idx[node]
        except KeyError:
            raise KeyError(f"unknown node {node!r}") from None

    def max_account_pair(self) -> float:
        return _offdiag_max(self.account_block())

    def save(self, path):
        """Binary row-major float64 file; node ids go to ``<path>.ids``."""
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<QQdd??", self.n, self.n_accounts, self.beta, self.tol,
                                 self.converged, self.accounts_only))
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        with open(f"{path}.ids", "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.nodes) + ("\n" if self.nodes else ""))

    @classmethod
    def load(cls, path) -> "SimilarityMatrix":
        with open(path, "rb") as fh:
            if fh.read(len(_MAGIC)) != _MAGIC:
                raise DataError(f"{path}: not a Katz matrix file")
            n, na, beta, tol, conv, acc_only = struct.unpack("<QQdd??", fh.read(34))
            vals = np.fromfile(fh, dtype="<f8", count=n * n)
            if vals.size != n * n:
                raise DataError(f"{path}: truncated Katz matrix file")
            vals = vals.reshape(n, n)
        with open(f"{path}.ids", encoding="utf-8") as fh:
            nodes = tuple(fh.read().splitlines())
        return cls(vals, nodes, int(na), beta, tol, conv, 0, acc_only)


def _offdiag_max(blk: np.ndarray) -> float:
    best = 0.0
    for i in range(blk.shape[0] - 1):
        row_max = blk[i, i + 1:].max()
        if row_max > best:
            best = float(row_max)
    return best


def resolve_beta(norm: float, beta: Union[str, float, None]) -> float:
    if beta in (None, "auto"):
        if norm == 0.0:
            raise ConfigError("beta is undefined for a graph without edges")
        return DEFAULT_BETA_FRACTION / norm
    beta = float(beta)
    if beta < 0 or (norm > 0 and beta >= 1.0 / norm):
        raise ConfigError(f"beta must lie in [0, 1/||M||_2) = [0, {1.0 / norm if norm else np.inf:.6g})")
    return beta


def _series(op, n: int, tol: float, max_terms: int):
    """Sum op^k(I) for k >= 1 until the newest term's max-norm drops below tol.

    ``op`` maps a dense matrix ``T`` to ``beta M T`` (or the block analogue).
    """
    term = np.eye(n)
    total = np.zeros((n, n))
    k = 0
    converged = False
    while k < max_terms:
        term = op(term)
        k += 1
        total += term
        if np.max(np.abs(term)) < tol:
            converged = True
            break
    return total, converged, k


def katz_matrix(
    g: BipartiteGraph,
    beta: Union[str, float] = "auto",
    tol: float = 1e-8,
    max_terms: int = 1000,
    weighted: bool = False,
    method: str = "auto",
    accounts_only: bool = False,
) -> SimilarityMatrix:
    """Katz similarity of ``g``.

    ``method`` is ``"series"`` (truncated power series), ``"solve"`` (dense
    linear solve) or ``"auto"``, which solves directly while the system has
    at most ``DENSE_SOLVE_LIMIT`` rows and falls back to the series beyond.
    """
    m = g.adjacency(weighted)
    norm = spectral_norm(m) if g.n_edges else 0.0
    beta = resolve_beta(norm, beta) if not (beta == 0 or beta == 0.0) else 0.0
    nodes = g.accounts if accounts_only else g.nodes
    n = len(nodes)
    if beta == 0.0 or n == 0:
        return SimilarityMatrix(np.zeros((n, n)), nodes, g.n_accounts, beta, tol, True, 0,
                                accounts_only)
    if method == "auto":
        method = "solve" if n <= DENSE_SOLVE_LIMIT else "series"
    if method not in ("solve", "series"):
        raise ConfigError(f"unknown Katz method {method!r}")

    if accounts_only:
        b = g.biadjacency(weighted)
        bt = b.T.tocsr()
        b2 = beta * beta

        def op(t):
            return b2 * (b @ (bt @ t))

        if method == "solve":
            a = (b @ bt).toarray() * (-b2)
            a[np.diag_indices(n)] += 1.0
            vals = _inverse_minus_identity(a)
            return SimilarityMatrix(vals, nodes, g.n_accounts, beta, tol, True, 0, True)
    else:
        def op(t):
            return beta * (m @ t)

        if method == "solve":
            a = -beta * m.toarray()
            a[np.diag_indices(n)] += 1.0
            vals = _inverse_minus_identity(a)
            return SimilarityMatrix(vals, nodes, g.n_accounts, beta, tol, True, 0, False)

    vals, converged, k = _series(op, n, tol, max_terms)
    if not converged:
        warnings.warn(f"Katz series did not reach tol={tol} within {max_terms} terms",
                      RuntimeWarning, stacklevel=2)
    vals = 0.5 * (vals + vals.T)
    return SimilarityMatrix(vals, nodes, g.n_accounts, beta, tol, converged, k, accounts_only)


def _inverse_minus_identity(a: np.ndarray) -> np.ndarray:
    """``a^{-1} - I`` for symmetric positive definite ``a``, in place where possible."""
    n = a.shape[0]
    try:
        c, low = sla.cho_factor(a, overwrite_a=True, check_finite=False)
        inv = sla.cho_solve((c, low), np.eye(n), overwrite_b=True, check_finite=False)
    except np.linalg.LinAlgError:
        inv = np.linalg.inv(a)
    inv[np.diag_indices(n)] -= 1.0
    inv += inv.T
    inv *= 0.5
    np.maximum(inv, 0.0, out=inv)
    return inv


def account_scores(s: SimilarityMatrix, left=None, right=None):
    blk = s.account_block()
    if left is None:
        left, right = triu_pairs(s.n_accounts)
    return left, right, blk[left, right]


def percentile_threshold(s: SimilarityMatrix, alpha: float) -> float:
    """``alpha``-th percentile (linear interpolation) of account-pair scores."""
    if s.n_accounts < 2:
        raise DataError("percentile needs at least two accounts")
    if not 0 <= alpha <= 100:
        raise ConfigError("alpha must be a percentile in [0, 100]")
    _, _, vals = account_scores(s)
    return float(np.percentile(vals, alpha))


def predict_unsupervised(s: SimilarityMatrix, alpha: float) -> PairDataset:
    """Label every account pair 1 when its score exceeds the alpha percentile."""
    left, right, vals = account_scores(s)
    thr = float(np.percentile(vals, alpha))
    labels = (vals > thr).astype(np.int8)
    return PairDataset(s.accounts, left, right, labels, scores=vals)


class KatzFeature:
    """Scalar pair feature ``max(S) - S_uv + eps``; larger means less similar.

    ``max(S)`` is taken over distinct account pairs.
    """

    dim = 1

    def __init__(self, s: SimilarityMatrix, epsilon: float = DEFAULT_EPSILON):
        self.s = s
        self.block = s.account_block()
        self.smax = s.max_account_pair()
        self.epsilon = epsilon

    def __call__(self, left, right):
        return (self.smax - self.block[left, right] + self.epsilon)[:, None]


def katz_pair_feature(s: SimilarityMatrix, u: str, v: str,
                      epsilon: float = DEFAULT_EPSILON,
                      smax: Optional[float] = None) -> float:
    if u == v:
        raise DataError("pair feature needs two distinct accounts")
    i, j = s.index(u), s.index(v)
    if i >= s.n_accounts or j >= s.n_accounts:
        raise KeyError(f"{u!r}/{v!r} are not both accounts")
    if smax is None:
        smax = s.max_account_pair()
    return float(smax - s.values[i, j] + epsilon)
