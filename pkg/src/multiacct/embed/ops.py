"""Node embedding container and the pairwise operators that turn two node
vectors into one pair feature."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ConfigError, DataError

OPERATORS = ("average", "l1", "l2", "cosine")


@dataclass
class EmbeddingMatrix:
    nodes: tuple[str, ...]
    vectors: np.ndarray

    def __post_init__(self):
        self.nodes = tuple(self.nodes)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.nodes):
            raise DataError("embedding matrix shape does not match node list")
        self._idx = {v: i for i, v in enumerate(self.nodes)}

    @property
    def d(self) -> int:
        return int(self.vectors.shape[1])

    def __getitem__(self, node: str) -> np.ndarray:
        return self.vectors[self._idx[node]]

    def rows(self, nodes: Sequence[str]) -> np.ndarray:
        try:
            return self.vectors[[self._idx[v] for v in nodes]]
        except KeyError as exc:
            raise DataError(f"node {exc.args[0]!r} has no embedding") from None

    def subset(self, nodes: Sequence[str]) -> "EmbeddingMatrix":
        return EmbeddingMatrix(tuple(nodes), self.rows(nodes))

    def save(self, path):
        """Text format: ``n d`` header, then ``node v1 ... vd`` per line."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{len(self.nodes)} {self.d}\n")
            fmt = "%.9g" if self.vectors.dtype == np.float32 else "%.17g"
            for node, row in zip(self.nodes, self.vectors):
                fh.write(node + " " + " ".join(fmt % x for x in row) + "\n")

    @classmethod
    def load(cls, path, dtype=np.float32) -> "EmbeddingMatrix":
        with open(path, encoding="utf-8") as fh:
            head = fh.readline().split()
            if len(head) != 2:
                raise DataError(f"{path}: bad embedding header")
            n, d = int(head[0]), int(head[1])
            nodes, vecs = [], np.empty((n, d), dtype=dtype)
            for i in range(n):
                parts = fh.readline().rstrip("\n").split(" ")
                if len(parts) != d + 1:
                    raise DataError(f"{path}: line {i + 2} has {len(parts) - 1} values, want {d}")
                nodes.append(parts[0])
                vecs[i] = np.array(parts[1:], dtype=np.float64)
        return cls(tuple(nodes), vecs)


def pair_operator(wu: np.ndarray, wv: np.ndarray, op: str = "l1"):
    """Combine two node vectors.

    ``average``, ``l1`` (``|wu - wv|``) and ``l2`` (``(wu - wv)**2``) work
    elementwise and return a length-d vector; ``cosine`` returns a scalar
    and is defined as 0 when either vector is zero.
    """
    wu = np.asarray(wu, dtype=np.float64)
    wv = np.asarray(wv, dtype=np.float64)
    if wu.shape != wv.shape:
        raise DataError("pair operator needs equal-length vectors")
    if op == "average":
        return (wu + wv) / 2.0
    if op == "l1":
        return np.abs(wu - wv)
    if op == "l2":
        return (wu - wv) ** 2
    if op == "cosine":
        nu, nv = np.linalg.norm(wu), np.linalg.norm(wv)
        if nu == 0.0 or nv == 0.0:
            warnings.warn("cosine with a zero vector; returning 0", RuntimeWarning, stacklevel=2)
            return 0.0
        return float(wu @ wv / (nu * nv))
    raise ConfigError(f"unknown pair operator {op!r}; choose from {OPERATORS}")


def batch_pair_operator(a: np.ndarray, b: np.ndarray, op: str = "l1") -> np.ndarray:
    """Row-wise :func:`pair_operator`; cosine comes back as an ``(n, 1)`` column."""
    if op == "average":
        return (a + b) * 0.5
    if op == "l1":
        return np.abs(a - b)
    if op == "l2":
        diff = a - b
        return diff * diff
    if op == "cosine":
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        denom = na * nb
        out = np.einsum("ij,ij->i", a, b)
        zero = denom == 0
        if zero.any():
            warnings.warn("cosine with a zero vector; returning 0", RuntimeWarning, stacklevel=2)
        out = np.divide(out, denom, out=np.zeros_like(out), where=~zero)
        return out[:, None]
    raise ConfigError(f"unknown pair operator {op!r}; choose from {OPERATORS}")


class EmbeddingFeature:
    """Pair feature source over account vectors (rows aligned to pair indices)."""

    def __init__(self, vectors: np.ndarray, op: str = "l1"):
        if op not in OPERATORS:
            raise ConfigError(f"unknown pair operator {op!r}; choose from {OPERATORS}")
        self.vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        self.op = op
        self.dim = 1 if op == "cosine" else self.vectors.shape[1]

    def __call__(self, left, right):
        return batch_pair_operator(self.vectors[left], self.vectors[right], self.op)
