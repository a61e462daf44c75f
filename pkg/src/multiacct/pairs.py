"""Account-pair containers shared by the Katz, spreading and evaluation code.

Pairs are stored as two parallel int32 index arrays into an account tuple,
always with ``left < right``.  Features are produced on demand by a
*feature source* so that millions of pairs never need a materialised
feature matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Protocol, Sequence

import numpy as np

from .errors import DataError

LABEL_POS, LABEL_NEG, LABEL_UNKNOWN = 1, 0, -1


class PairFeatures(Protocol):
    dim: int

    def __call__(self, left: np.ndarray, right: np.ndarray) -> np.ndarray: ...


def triu_pairs(n: int, offset_cols: Optional[np.ndarray] = None):
    """All ``i < j`` index pairs of ``range(n)`` in row-major order (int32).

    If ``offset_cols`` is given, the local indices are mapped through it.
    """
    if n < 2:
        e = np.empty(0, dtype=np.int32)
        return e, e.copy()
    counts = np.arange(n - 1, 0, -1, dtype=np.int64)
    total = int(counts.sum())
    left = np.repeat(np.arange(n - 1, dtype=np.int32), counts)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    right = np.arange(total, dtype=np.int64)
    right -= np.repeat(starts, counts)
    right += left
    right += 1
    right = right.astype(np.int32)
    if offset_cols is not None:
        offset_cols = np.asarray(offset_cols, dtype=np.int32)
        left, right = offset_cols[left], offset_cols[right]
        swap = left > right
        left[swap], right[swap] = right[swap], left[swap]
    return left, right


def n_pairs(n: int) -> int:
    return n * (n - 1) // 2


@dataclass
class PairDataset:
    accounts: tuple[str, ...]
    left: np.ndarray
    right: np.ndarray
    labels: np.ndarray
    features: Optional[PairFeatures] = None
    scores: Optional[np.ndarray] = None
    cluster: Optional[np.ndarray] = None
    _pos: dict = field(default=None, repr=False)

    def __len__(self):
        return int(self.left.shape[0])

    @property
    def dim(self) -> int:
        return 0 if self.features is None else self.features.dim

    @property
    def X(self) -> np.ndarray:
        """Materialised feature matrix; only sensible for small datasets."""
        if self.features is None:
            raise DataError("pair dataset has no feature source")
        return self.features(self.left, self.right)

    def feature_chunks(self, chunk: int = 65536) -> Iterator[tuple[slice, np.ndarray]]:
        for start in range(0, len(self), chunk):
            sl = slice(start, min(start + chunk, len(self)))
            yield sl, self.features(self.left[sl], self.right[sl])

    def pairs(self) -> list[tuple[str, str]]:
        a = self.accounts
        return [(a[i], a[j]) for i, j in zip(self.left.tolist(), self.right.tolist())]

    def position(self, u: str, v: str) -> int:
        if self._pos is None:
            idx = {a: i for i, a in enumerate(self.accounts)}
            self._pos = {"idx": idx,
                         "pair": {(int(i), int(j)): k for k, (i, j) in
                                  enumerate(zip(self.left, self.right))}}
        iu, iv = self._pos["idx"][u], self._pos["idx"][v]
        return self._pos["pair"][(min(iu, iv), max(iu, iv))]

    def validate(self):
        if self.left.shape != self.right.shape or self.labels.shape != self.left.shape:
            raise DataError("pair arrays have mismatched lengths")
        if np.any(self.left >= self.right):
            raise DataError("pairs must satisfy left < right (no self pairs)")
        key = self.left.astype(np.int64) * len(self.accounts) + self.right
        if np.unique(key).size != key.size:
            raise DataError("duplicate pairs in dataset")
        if not np.isin(self.labels, (LABEL_POS, LABEL_NEG, LABEL_UNKNOWN)).all():
            raise DataError("labels must be in {1, 0, -1}")
        return self

    def subset(self, idx: np.ndarray) -> "PairDataset":
        return PairDataset(
            self.accounts, self.left[idx], self.right[idx], self.labels[idx],
            self.features,
            None if self.scores is None else self.scores[idx],
            None if self.cluster is None else self.cluster[idx],
        )


class ArrayFeatures:
    """Feature source backed by an explicit per-pair matrix (small data, tests)."""

    def __init__(self, X: np.ndarray, left: np.ndarray, right: np.ndarray, n: int):
        X = np.asarray(X, dtype=np.float64)
        self._X = X.reshape(len(X), -1)
        self.dim = self._X.shape[1]
        self._lookup = {(int(i), int(j)): k for k, (i, j) in enumerate(zip(left, right))}

    def __call__(self, left, right):
        rows = [self._lookup[(int(i), int(j))] for i, j in zip(left, right)]
        return self._X[rows]


def dataset_from_matrix(X: np.ndarray, labels: Sequence[int]) -> PairDataset:
    """Wrap ``len(X)`` independent samples as a pair dataset (testing aid).

    The samples are attached to synthetic pairs ``(0, 1), (0, 2), ...`` so the
    spreading engine can be exercised on arbitrary feature sets.
    """
    X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
    k = len(X)
    n = 2
    while n_pairs(n) < k:
        n += 1
    left, right = triu_pairs(n)
    left, right = left[:k], right[:k]
    accounts = tuple(f"s{i}" for i in range(n))
    feats = ArrayFeatures(X, left, right, n)
    return PairDataset(accounts, left, right, np.asarray(labels, dtype=np.int8), feats)
