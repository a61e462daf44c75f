"""Skip-gram with negative sampling over random-walk corpora.

A word2vec-style trainer: the context token's input vector is trained to
predict the centre token against ``negatives`` draws from the unigram^0.75
distribution, window shrunk at random per position, learning rate decayed
linearly over the whole run.  Single-worker training is bitwise
reproducible for a given seed; the multi-worker path is lock-free
(Hogwild) and therefore not.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from ..errors import ConfigError
from .ops import EmbeddingMatrix

log = logging.getLogger(__name__)

NEG_TABLE_SIZE = 1_000_000


@dataclass
class SkipGramConfig:
    d: int = 128
    window: int = 10
    negatives: int = 5
    epochs: int = 1
    learning_rate: float = 0.025
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError("embedding length d must be >= 1")
        if self.window < 1 or self.negatives < 0 or self.epochs < 1:
            raise ConfigError("window/epochs must be >= 1 and negatives >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


@dataclass
class TrainResult:
    embedding: EmbeddingMatrix
    epoch_loss: list[float] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)


@numba.njit(cache=True, inline="always")
def _lcg(state):
    return state * np.uint64(25214903917) + np.uint64(11)


@numba.njit(cache=True, fastmath=True)
def _train_rows(walks, rows, syn0, syn1, table, window, negatives, lr0, done0, total,
                state, neu1e):
    d = syn0.shape[1]
    length = walks.shape[1]
    tsize = np.uint64(table.size)
    uwin = np.uint64(window)
    sh = np.uint64(16)
    one = np.float32(1.0)
    loss = 0.0
    npairs = 0
    done = done0
    for r in rows:
        walk = walks[r]
        for i in range(length):
            center = walk[i]
            if center < 0:
                break
            done += 1.0
            lr = np.float32(lr0 * max(1.0 - done / total, 1e-4))
            state = _lcg(state)
            span = window - np.int64((state >> sh) % uwin)
            lo = max(0, i - span)
            hi = min(length - 1, i + span)
            for j in range(lo, hi + 1):
                if j == i:
                    continue
                ctx = walk[j]
                if ctx < 0:
                    break
                h = syn0[ctx]
                neu1e[:] = 0.0
                for s in range(negatives + 1):
                    if s == 0:
                        target = center
                    else:
                        state = _lcg(state)
                        target = table[np.int64((state >> sh) % tsize)]
                        if target == center:
                            continue
                    o = syn1[target]
                    f = np.float32(0.0)
                    for k in range(d):
                        f += h[k] * o[k]
                    if f > 20.0:
                        f = np.float32(20.0)
                    elif f < -20.0:
                        f = np.float32(-20.0)
                    sig = one / (one + np.exp(-f))
                    if s == 0:
                        loss -= np.log(sig + 1e-7)
                        g = (one - sig) * lr
                    else:
                        loss -= np.log(one - sig + 1e-7)
                        g = -sig * lr
                    for k in range(d):
                        neu1e[k] += g * o[k]
                        o[k] += g * h[k]
                for k in range(d):
                    h[k] += neu1e[k]
                npairs += 1
    return loss, npairs, state


@numba.njit(cache=True, parallel=True, fastmath=True)
def _train_parallel(walks, chunks, offsets, syn0, syn1, table, window, negatives, lr0, done0,
                    total, seeds):
    nchunk = len(chunks) - 1
    losses = np.zeros(nchunk)
    pairs = np.zeros(nchunk, dtype=np.int64)
    d = syn0.shape[1]
    for c in numba.prange(nchunk):
        neu1e = np.empty(d, dtype=np.float32)
        rows = np.arange(chunks[c], chunks[c + 1])
        l, p, _ = _train_rows(walks, rows, syn0, syn1, table, window, negatives, lr0,
                              done0 + offsets[c], total, seeds[c], neu1e)
        losses[c] = l
        pairs[c] = p
    return losses.sum(), pairs.sum()


def negative_table(counts: np.ndarray, size: int = NEG_TABLE_SIZE) -> np.ndarray:
    """Unigram^0.75 lookup table for negative draws."""
    pw = counts.astype(np.float64) ** 0.75
    cdf = np.cumsum(pw) / pw.sum()
    pos = (np.arange(size) + 0.5) / size
    return np.searchsorted(cdf, pos).astype(np.int32)


def train_skipgram(walks: np.ndarray, nodes, cfg: SkipGramConfig | None = None) -> TrainResult:
    """Train node vectors from an int32 walk array (``-1`` padded).

    ``nodes`` names the token ids.  Tokens never visited keep a zero vector
    and are listed in ``missing``.
    """
    cfg = cfg or SkipGramConfig()
    nodes = tuple(nodes)
    walks = np.ascontiguousarray(walks, dtype=np.int32)
    if walks.size == 0 or (walks >= 0).sum() == 0:
        raise ConfigError("cannot train on an empty walk corpus")
    n = len(nodes)
    counts = np.bincount(walks[walks >= 0], minlength=n)
    rng = np.random.default_rng(cfg.seed)
    syn0 = ((rng.random((n, cfg.d), dtype=np.float32) - 0.5) / cfg.d).astype(np.float32)
    syn1 = np.zeros((n, cfg.d), dtype=np.float32)
    table = negative_table(counts)
    tokens = int(counts.sum())
    total = float(tokens * cfg.epochs)
    state = np.uint64(rng.integers(1, 2**63))
    losses = []
    rows = np.arange(walks.shape[0], dtype=np.int64)
    row_tokens = np.concatenate(([0], np.cumsum((walks >= 0).sum(axis=1))))
    neu1e = np.empty(cfg.d, dtype=np.float32)
    for ep in range(cfg.epochs):
        done0 = float(ep * tokens)
        if cfg.workers > 1:
            bounds = np.linspace(0, walks.shape[0], cfg.workers + 1).astype(np.int64)
            offsets = row_tokens[bounds[:-1]].astype(np.float64)
            seeds = np.random.SeedSequence([cfg.seed, ep]).generate_state(cfg.workers,
                                                                          dtype=np.uint64)
            loss, npairs = _train_parallel(walks, bounds, offsets, syn0, syn1, table, cfg.window,
                                           cfg.negatives, cfg.learning_rate, done0, total,
                                           seeds)
        else:
            loss, npairs, state = _train_rows(walks, rows, syn0, syn1, table, cfg.window,
                                              cfg.negatives, cfg.learning_rate, done0, total,
                                              state, neu1e)
            state = np.uint64(state)  # keep the dispatch type fixed across epochs
        mean = float(loss / max(npairs, 1))
        if not np.isfinite(mean):
            raise ConfigError(f"skip-gram loss diverged in epoch {ep + 1}")
        losses.append(mean)
        log.info("skip-gram epoch %d/%d loss %.4f", ep + 1, cfg.epochs, mean)
    missing = [nodes[i] for i in np.flatnonzero(counts == 0)]
    if missing:
        syn0[counts == 0] = 0.0
        warnings.warn(f"{len(missing)} node(s) never appear in walks; zero vectors assigned",
                      RuntimeWarning, stacklevel=2)
    return TrainResult(EmbeddingMatrix(nodes, syn0), losses, missing)
