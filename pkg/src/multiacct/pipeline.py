"""End-to-end detection pipeline and the sensitivity-sweep driver.

Stage order: ingest -> (simulated split) -> clean -> Katz and/or Node2Vec
-> cluster -> sample truth -> spread per cluster -> merge -> evaluate.
Every stage writes its artifact into the output directory; graph, Katz,
embedding and cluster results are also kept in a content-addressed cache
so sweeps that only vary a downstream parameter reuse the expensive parts.
"""

from __future__ import annotations

import configparser
import contextlib
import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import shutil
import time
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .cluster import ClusterAssignment, candidate_pairs, spectral_cluster
from .embed import EmbeddingFeature, EmbeddingMatrix, SkipGramConfig, WalkConfig, node2vec
from .embed.ops import OPERATORS
from .errors import ConfigError, DataError, MultiAcctError
from .graphcore import ActivityRecord, BipartiteGraph, build_bipartite, clean_graph, read_activities
from .katz import KatzFeature, SimilarityMatrix, katz_matrix
from .metrics import EvalReport, evaluate
from .pairs import PairDataset, n_pairs, triu_pairs
from .spread import SpreadConfig, label_spread
from .truth import (OwnershipMap, alternative_ground_truth, label_pairs, merge_labels,
                    sample_queried_nodes, split_accounts, subsample_activities)

log = logging.getLogger(__name__)

METHODS = ("unsup-katz", "semi-katz", "semi-embed")
SWEEP_PARAMETERS = ("density", "splits", "alpha", "d", "pq", "clusters")
PREDICTION_FIELDS = ("u", "v", "prob", "label", "source_cluster")


def derive_seed(seed: int, stage: str) -> int:
    """Stage seed: the first four bytes (little endian) of sha256("<seed>:<stage>")."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class KatzOptions:
    beta: Union[float, str] = "auto"
    tol: float = 1e-8
    alpha: float = 95.0
    weighted: bool = False
    epsilon: float = 1e-6
    max_terms: int = 1000
    method: str = "auto"

    def validate(self):
        if self.beta != "auto":
            try:
                self.beta = float(self.beta)
            except (TypeError, ValueError):
                raise ConfigError("katz.beta must be 'auto' or a number") from None
            if self.beta < 0:
                raise ConfigError("katz.beta must be non-negative")
        if not 0 <= self.alpha <= 100:
            raise ConfigError("katz.alpha is a percentile in [0, 100]")
        if self.tol <= 0 or self.max_terms < 1 or self.epsilon <= 0:
            raise ConfigError("katz.tol, katz.epsilon must be positive and max_terms >= 1")
        if self.method not in ("auto", "solve", "series"):
            raise ConfigError(f"unknown katz.method {self.method!r}")


@dataclass
class EmbedOptions:
    p: float = 0.25
    q: float = 4.0
    d: int = 128
    num_walks: int = 10
    walk_length: int = 80
    window: int = 10
    negatives: int = 5
    epochs: int = 1
    learning_rate: float = 0.025
    operator: str = "l1"
    weighted: bool = True
    workers: int = 1
    seed: Optional[int] = None

    def walk_config(self, seed: int) -> WalkConfig:
        return WalkConfig(p=self.p, q=self.q, num_walks=self.num_walks,
                          walk_length=self.walk_length, seed=seed)

    def skipgram_config(self, seed: int) -> SkipGramConfig:
        return SkipGramConfig(d=self.d, window=self.window, negatives=self.negatives,
                              epochs=self.epochs, learning_rate=self.learning_rate, seed=seed,
                              workers=self.workers)

    def validate(self):
        self.walk_config(0)
        self.skipgram_config(0)
        if self.operator not in OPERATORS:
            raise ConfigError(f"embed.operator must be one of {OPERATORS}")
        if self.workers < 1:
            raise ConfigError("embed.workers must be >= 1")


@dataclass
class SpreadOptions:
    sigma: Union[float, str] = "auto"
    clamp: float = 0.2
    tol: float = 1e-6
    max_iter: int = 1000
    pair_budget: int = 8000
    knn: int = 10
    exact_knn_limit: int = 50_000
    cell_size: int = 512
    affinity: str = "auto"
    seed: Optional[int] = None

    def spread_config(self, seed: int) -> SpreadConfig:
        return SpreadConfig(sigma=self.sigma, clamp=self.clamp, tol=self.tol,
                            max_iter=self.max_iter, pair_budget=self.pair_budget, knn=self.knn,
                            exact_knn_limit=self.exact_knn_limit, cell_size=self.cell_size,
                            affinity=self.affinity, seed=seed)

    def validate(self):
        self.spread_config(0)


@dataclass
class ClusterOptions:
    c: int = 3
    n_init: int = 20
    seed: Optional[int] = None

    def validate(self):
        if self.c < 1 or self.n_init < 1:
            raise ConfigError("cluster.c and cluster.n_init must be >= 1")


@dataclass
class TruthOptions:
    fraction: float = 0.25
    use_alternative: bool = False
    high_pct: float = 99.95
    low_pct: float = 80.0
    path: Optional[str] = None
    seed: Optional[int] = None

    def validate(self):
        if not 0 <= self.fraction <= 1:
            raise ConfigError("truth.fraction must lie in [0, 1]")
        if not 0 <= self.low_pct < self.high_pct <= 100:
            raise ConfigError("truth.low_pct must be below truth.high_pct, both in [0, 100]")


@dataclass
class SimulateOptions:
    s: Optional[int] = None
    min_activities: int = 1
    density: Optional[float] = None
    users: Optional[int] = None
    seed: Optional[int] = None

    @property
    def enabled(self) -> bool:
        return self.s is not None

    def validate(self):
        if self.s is not None and self.s < 1:
            raise ConfigError("simulate.s must be >= 1")
        if self.density is not None:
            if self.s is None:
                raise ConfigError("simulate.density needs simulate.s")
            if self.density <= 0:
                raise ConfigError("simulate.density must be positive")
        if self.users is not None and self.users < 1:
            raise ConfigError("simulate.users must be >= 1")


SECTIONS = {
    "katz": KatzOptions,
    "embed": EmbedOptions,
    "spread": SpreadOptions,
    "cluster": ClusterOptions,
    "truth": TruthOptions,
    "simulate": SimulateOptions,
}


@dataclass
class PipelineConfig:
    inputs: list[str] = field(default_factory=list)
    method: str = "semi-embed"
    output: str = "out"
    seed: int = 0
    emit: str = "positives"
    format: Optional[str] = None
    cache_dir: Optional[str] = None
    # precomputed artifacts to resume from
    graph: Optional[str] = None
    embeddings: Optional[str] = None
    similarity: Optional[str] = None
    clusters: Optional[str] = None
    katz: KatzOptions = field(default_factory=KatzOptions)
    embed: EmbedOptions = field(default_factory=EmbedOptions)
    spread: SpreadOptions = field(default_factory=SpreadOptions)
    cluster: ClusterOptions = field(default_factory=ClusterOptions)
    truth: TruthOptions = field(default_factory=TruthOptions)
    simulate: SimulateOptions = field(default_factory=SimulateOptions)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_file(cls, path, overrides: Sequence[str] = ()) -> "PipelineConfig":
        """Read a key-value file, then apply ``key=value`` overrides.

        The file is INI-like: ``[katz]`` headed sections hold that section's
        keys, top-level keys live under ``[pipeline]`` (or before any header),
        and dotted keys such as ``katz.alpha`` are accepted anywhere.
        """
        text = Path(path).read_text(encoding="utf-8")
        if not text.lstrip().startswith("["):
            text = "[pipeline]\n" + text
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                           inline_comment_prefixes=(";", "#"))
        parser.optionxform = str
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        cfg = cls()
        for section in parser.sections():
            for key, value in parser.items(section):
                name = key if section == "pipeline" or "." in key else f"{section}.{key}"
                cfg.set(name, value)
        for item in overrides:
            cfg.set_item(item)
        return cfg

    def set_item(self, item: str):
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        self.set(key.strip(), value.strip())

    def set(self, key: str, value):
        """Set ``key`` (``method`` or ``section.name``); strings are coerced."""
        target, name = self, key
        if "." in key:
            section, name = key.split(".", 1)
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section {section!r}")
            target = getattr(self, section)
        hints = typing.get_type_hints(type(target))
        if name not in hints or name in SECTIONS and target is self:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, str):
            value = _coerce(value, hints[name], key)
        setattr(target, name, value)

    def replace(self, **changes) -> "PipelineConfig":
        """Deep copy with dotted-key changes applied (``{"katz.alpha": 99}``)."""
        out = dataclasses.replace(self, **{k: dataclasses.replace(getattr(self, k))
                                           for k in SECTIONS})
        out.inputs = list(self.inputs)
        for k, v in changes.items():
            out.set(k.replace("__", "."), v)
        return out

    def validate(self) -> "PipelineConfig":
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.emit not in ("positives", "all"):
            raise ConfigError("emit must be 'positives' or 'all'")
        if not self.inputs and not self.graph:
            raise ConfigError("no input activity files given")
        for p in list(self.inputs) + [x for x in (self.graph, self.embeddings, self.similarity,
                                                  self.clusters, self.truth.path) if x]:
            if not Path(p).exists():
                raise ConfigError(f"input {p} does not exist")
        for name in SECTIONS:
            getattr(self, name).validate()
        if self.method != "unsup-katz" and self.truth.fraction == 0 and \
                not self.truth.use_alternative:
            raise ConfigError("semi-supervised methods need truth.fraction > 0 or "
                              "truth.use_alternative")
        if self.graph and self.simulate.enabled:
            raise ConfigError("simulate.* cannot be combined with a precomputed graph")
        return self

    def stage_seed(self, stage: str, explicit: Optional[int] = None) -> int:
        return int(explicit) if explicit is not None else derive_seed(self.seed, stage)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(text: str, hint, key: str):
    origin = typing.get_origin(hint)
    args = [a for a in typing.get_args(hint) if a is not type(None)]
    if origin is Union:
        if text.lower() in ("", "none", "null") and type(None) in typing.get_args(hint):
            return None
        for a in sorted(args, key=lambda t: t is str):
            try:
                return _coerce(text, a, key)
            except ConfigError:
                continue
        raise ConfigError(f"cannot parse {key}={text!r}")
    if origin is list:
        return [t.strip() for t in text.split(",") if t.strip()]
    try:
        if hint is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if hint is int:
            f = float(text)
            if f != int(f):
                raise ValueError(text)
            return int(f)
        if hint is float:
            return float(text)
        return hint(text)
    except ValueError:
        raise ConfigError(f"cannot parse {key}={text!r} as {getattr(hint, '__name__', hint)}") \
            from None


# ---------------------------------------------------------------------------
# caching


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class StageCache:
    """Content-addressed stage results: last value per stage in memory, all on disk."""

    def __init__(self, root=None):
        self.root = Path(root) if root else None
        self._mem: dict[str, tuple[str, object]] = {}
        if self.root:
            self.root.mkdir(parents=True, exist_ok=True)

    def file(self, stage: str, key: str, suffix: str) -> Optional[Path]:
        return self.root / f"{stage}-{key[:24]}{suffix}" if self.root else None

    def recall(self, stage: str, key: str):
        hit = self._mem.get(stage)
        return hit[1] if hit and hit[0] == key else None

    def remember(self, stage: str, key: str, value):
        self._mem[stage] = (key, value)


def _place(src: Optional[Path], dest: Path, write):
    """Put an artifact at ``dest``: link/copy from the cache or write it."""
    if dest.exists() or dest.is_symlink():
        dest.unlink()
    if src is not None and src.exists():
        try:
            os.link(src, dest)
        except OSError:
            shutil.copyfile(src, dest)
    else:
        write(dest)


# ---------------------------------------------------------------------------
# results


@dataclass
class PipelineResult:
    report: Optional[EvalReport]
    predictions: Path
    converged: bool
    info: dict


@contextlib.contextmanager
def _stage(name: str, timings: dict):
    t0 = time.perf_counter()
    log.info("stage %s", name)
    try:
        yield
    except MultiAcctError as exc:
        raise type(exc)(f"[{name}] {exc}") from exc
    except (ValueError, MemoryError, OSError) as exc:
        raise MultiAcctError(f"[{name}] {type(exc).__name__}: {exc}") from exc
    finally:
        timings[name] = round(time.perf_counter() - t0, 3)


# ---------------------------------------------------------------------------
# stages


def _load_records(cfg: PipelineConfig) -> tuple[list[ActivityRecord], int]:
    records: list[ActivityRecord] = []
    rejected = 0
    for p in cfg.inputs:
        parsed = read_activities(p, cfg.format)
        records.extend(parsed.records)
        rejected += parsed.rejected
    if not records:
        raise DataError("input files contain no activities")
    return records, rejected


def _attach_owners(records: list[ActivityRecord], owners: Optional[OwnershipMap]):
    if not owners:
        return records
    return [r if r.user_id is not None or r.account_id not in owners
            else ActivityRecord(r.account_id, r.page_id, r.weight, owners[r.account_id])
            for r in records]


def _pick_users(records: list[ActivityRecord], n_users: int, seed: int):
    users = sorted({r.user_id or r.account_id for r in records})
    if n_users >= len(users):
        return records
    rng = np.random.default_rng(seed)
    keep = {users[i] for i in rng.choice(len(users), size=n_users, replace=False)}
    return [r for r in records if (r.user_id or r.account_id) in keep]


def prepare_graph(cfg: PipelineConfig, cache: StageCache, info: dict):
    """Cleaned graph, ownership map (possibly empty) and the cache key."""
    truth_digest = file_digest(cfg.truth.path) if cfg.truth.path else None
    if cfg.graph:
        key = _digest(["graph-file", file_digest(cfg.graph), truth_digest])
        hit = cache.recall("graph", key)
        if hit is None:
            g = BipartiteGraph.load(cfg.graph)
            owners = OwnershipMap.load(cfg.truth.path) if cfg.truth.path else OwnershipMap()
            hit = (g, owners, {"source": str(cfg.graph), "removed": [], "threshold": None})
            cache.remember("graph", key, hit)
        return hit + (key,)

    sim = cfg.simulate
    sim_seed = cfg.stage_seed("simulate", sim.seed)
    key = _digest(["graph", [file_digest(p) for p in cfg.inputs], cfg.format, truth_digest,
                   dataclasses.asdict(sim) if sim.enabled else None,
                   sim_seed if sim.enabled else None])
    hit = cache.recall("graph", key)
    if hit is not None:
        return hit + (key,)
    gfile = cache.file("graph", key, ".txt")
    ofile = cache.file("graph", key, ".owners.csv")
    jfile = cache.file("graph", key, ".clean.json")
    if gfile is not None and gfile.exists() and ofile.exists() and jfile.exists():
        hit = (BipartiteGraph.load(gfile), OwnershipMap.load(ofile),
               json.loads(jfile.read_text(encoding="utf-8")))
        cache.remember("graph", key, hit)
        return hit + (key,)

    records, rejected = _load_records(cfg)
    info["rejected_rows"] = rejected
    owners = OwnershipMap.load(cfg.truth.path) if cfg.truth.path else None
    records = _attach_owners(records, owners)
    if sim.enabled:
        rng = np.random.default_rng(sim_seed)
        seeds = rng.integers(0, 2**32, size=3)
        if sim.users is not None:
            records = _pick_users(records, sim.users, int(seeds[0]))
        if sim.density is not None:
            records = subsample_activities(records, max(1, round(sim.density * sim.s)),
                                           int(seeds[1]))
        records, owners = split_accounts(records, sim.s, seed=int(seeds[2]),
                                         min_activities=sim.min_activities)
    elif owners is None:
        owners = OwnershipMap.from_records(records)
    raw = build_bipartite(records)
    cleaned = clean_graph(raw)
    meta = {
        "raw_accounts": raw.n_accounts, "raw_pages": raw.n_pages, "raw_edges": raw.n_edges,
        "activities": int(sum(r.weight for r in records)),
        "threshold": cleaned.threshold, "removed": cleaned.removed,
    }
    owners = OwnershipMap({a: u for a, u in owners.items() if a in set(cleaned.graph.accounts)})
    if gfile is not None:
        cleaned.graph.save(gfile)
        owners.save(ofile)
        jfile.write_text(json.dumps(meta, indent=1), encoding="utf-8")
    hit = (cleaned.graph, owners, meta)
    cache.remember("graph", key, hit)
    return hit + (key,)


def compute_similarity(cfg: PipelineConfig, g: BipartiteGraph, gkey: str, cache: StageCache):
    k = cfg.katz
    if cfg.similarity:
        key = _digest(["katz-file", file_digest(cfg.similarity)])
    else:
        key = _digest(["katz", gkey, k.beta, k.tol, k.weighted, k.max_terms, k.method])
    hit = cache.recall("katz", key)
    if hit is not None:
        return hit, key
    path = Path(cfg.similarity) if cfg.similarity else cache.file("katz", key, ".bin")
    if path is not None and path.exists():
        s = SimilarityMatrix.load(path)
    else:
        s = katz_matrix(g, beta=k.beta, tol=k.tol, max_terms=k.max_terms, weighted=k.weighted,
                        method=k.method, accounts_only=True)
        if path is not None:
            s.save(path)
    if tuple(s.accounts) != tuple(g.accounts):
        raise DataError("similarity matrix accounts do not match the graph")
    cache.remember("katz", key, s)
    return s, key


def compute_embedding(cfg: PipelineConfig, g: BipartiteGraph, gkey: str, cache: StageCache):
    e = cfg.embed
    walk_seed = cfg.stage_seed("walks", e.seed)
    sg_seed = cfg.stage_seed("skipgram", e.seed)
    if cfg.embeddings:
        key = _digest(["embed-file", file_digest(cfg.embeddings)])
    else:
        opts = {k: v for k, v in dataclasses.asdict(e).items() if k not in ("operator",)}
        key = _digest(["embed", gkey, opts, walk_seed, sg_seed])
    hit = cache.recall("embed", key)
    if hit is not None:
        return hit, key
    path = Path(cfg.embeddings) if cfg.embeddings else cache.file("embed", key, ".txt")
    info = {}
    if path is not None and path.exists():
        emb = EmbeddingMatrix.load(path)
    else:
        res = node2vec(g, e.walk_config(walk_seed), e.skipgram_config(sg_seed),
                       weighted=e.weighted, workers=e.workers)
        emb = res.embedding
        info = {"epoch_loss": res.epoch_loss, "missing": len(res.missing)}
        if path is not None:
            emb.save(path)
    missing = set(g.accounts) - set(emb.nodes)
    if missing:
        raise DataError(f"{len(missing)} account(s) have no embedding, e.g. {min(missing)!r}")
    cache.remember("embed", key, (emb, info))
    return (emb, info), key


def compute_clusters(cfg: PipelineConfig, vectors: np.ndarray, accounts, ekey: str,
                     cache: StageCache) -> ClusterAssignment:
    c = cfg.cluster
    seed = cfg.stage_seed("cluster", c.seed)
    if cfg.clusters:
        key = _digest(["cluster-file", file_digest(cfg.clusters)])
    else:
        key = _digest(["cluster", ekey, c.c, c.n_init, seed])
    hit = cache.recall("cluster", key)
    if hit is not None:
        return hit
    path = Path(cfg.clusters) if cfg.clusters else cache.file("cluster", key, ".csv")
    if path is not None and path.exists():
        ca = ClusterAssignment.load(path)
        if tuple(ca.accounts) != tuple(accounts):
            pos = ca.as_dict()
            try:
                ca = ClusterAssignment(tuple(accounts),
                                       np.array([pos[a] for a in accounts], dtype=np.int64))
            except KeyError as exc:
                raise DataError(f"account {exc.args[0]!r} has no cluster") from None
    else:
        ca = spectral_cluster(vectors, accounts, c=c.c, seed=seed, n_init=c.n_init)
        if path is not None:
            ca.save(path)
    cache.remember("cluster", key, ca)
    return ca


def _block_counts(owner: np.ndarray) -> tuple[int, int]:
    """(pairs, same-owner pairs) among accounts with known owner codes."""
    owner = owner[owner >= 0]
    if owner.size < 2:
        return n_pairs(int(owner.size)), 0
    cnt = np.bincount(owner)
    return n_pairs(int(owner.size)), int((cnt * (cnt - 1) // 2).sum())


def population_report(owner: np.ndarray, left: np.ndarray, right: np.ndarray,
                      pred: np.ndarray, scores: np.ndarray,
                      query_block: Optional[np.ndarray] = None) -> Optional[EvalReport]:
    """Evaluate over every account pair whose owners are both known.

    ``left/right`` are the pairs that carry a prediction; all other pairs
    enter as one weighted block predicted 0 with score ``-inf``.  Pairs whose two
    endpoints were queried in the same block (``query_block`` equal and
    non-negative) trained on their own label and are left out.
    Returns ``None`` when the population has a single class.
    """
    owner = np.asarray(owner, dtype=np.int64)
    n = owner.size
    u_total, u_pos = _block_counts(owner)
    e_total = e_pos = 0
    keep = (owner[left] >= 0) & (owner[right] >= 0)
    if query_block is not None:
        qb = np.asarray(query_block)
        for k in np.unique(qb[qb >= 0]):
            t, p = _block_counts(owner[qb == k])
            e_total += t
            e_pos += p
        excl = (qb[left] >= 0) & (qb[left] == qb[right])
    else:
        excl = np.zeros(left.shape, dtype=bool)
    same = owner[left] == owner[right]
    lk = int(keep.sum())
    lk_pos = int((keep & same).sum())
    xk = keep & excl
    x_total, x_pos = int(xk.sum()), int((xk & same).sum())
    keep &= ~excl
    rest_total = u_total - lk - (e_total - x_total)
    rest_pos = u_pos - lk_pos - (e_pos - x_pos)
    idx = np.flatnonzero(keep)
    del keep, excl, xk
    m = idx.size
    extra_t, extra_w = [], []
    if rest_total > 0:
        extra_t = [x for x, c in ((1, rest_pos), (0, rest_total - rest_pos)) if c > 0]
        extra_w = [c for c in (rest_pos, rest_total - rest_pos) if c > 0]
    # listed pairs first, then the unlisted block as weighted entries; the
    # buffers are filled in place since this runs over tens of millions of pairs
    size = m + len(extra_t)
    p = np.zeros(size, dtype=np.int8)
    t = np.empty(size, dtype=np.int8)
    s = np.full(size, -np.inf)
    np.take(np.asarray(pred, dtype=np.int8), idx, out=p[:m])
    np.take(same.view(np.int8), idx, out=t[:m])
    np.take(np.asarray(scores, dtype=np.float64), idx, out=s[:m])
    del idx, same
    t[m:] = extra_t
    w = None
    if extra_t:
        w = np.ones(size, dtype=np.int64)
        w[m:] = extra_w
    if t.size == 0:
        return None
    rep = evaluate(p, t, scores=s, weights=w, n_unknown=n_pairs(n) - u_total)
    rep.extra.update({"n_excluded_queried": e_total, "n_unlisted": rest_total,
                      "unlisted_positives": rest_pos, "n_positive_pairs": u_pos})
    return rep


def _spread_block(data: PairDataset, scfg: SpreadConfig):
    labels = data.labels
    has_pos = bool(np.any(labels == 1))
    has_neg = bool(np.any(labels == 0))
    if has_pos and has_neg:
        res = label_spread(data, scfg)
        return res.prob, res.labels, res.score, res.converged, {"method": res.method, "sigma": res.sigma,
                                                     "n_iter": res.n_iter}
    # one class only: nothing can be told apart, every pair takes that class
    fill = 1 if has_pos else 0
    log.warning("block of %d pairs has only label %s; predicting it everywhere", len(data),
                fill if (has_pos or has_neg) else "none")
    hard = np.where(labels >= 0, labels, fill).astype(np.int8)
    return hard.astype(np.float64), hard, hard.astype(np.float64), True, \
        {"method": "single-class"}


def _queried_blocks(cfg, accounts, blocks, owners: OwnershipMap, seed: int):
    """Sample queried accounts per block; only accounts with a known owner qualify."""
    rng = np.random.default_rng(seed)
    qb = np.full(len(accounts), -1, dtype=np.int64)
    known = np.fromiter((a in owners for a in accounts), dtype=bool, count=len(accounts))
    queried: set[str] = set()
    for k in range(int(blocks.max()) + 1 if blocks.size else 0):
        members = np.flatnonzero(blocks == k)
        eligible = members[known[members]]
        block_seed = int(rng.integers(0, 2**32))
        if cfg.truth.fraction == 0 or eligible.size == 0:
            continue
        if eligible.size < members.size:
            log.warning("cluster %d: %d account(s) lack truth and cannot be queried", k,
                        members.size - eligible.size)
        target = math.ceil(cfg.truth.fraction * members.size - 1e-9)
        frac = min(1.0, target / eligible.size)
        pick = sample_queried_nodes([accounts[i] for i in eligible], frac, seed=block_seed)
        queried |= pick
    for i, a in enumerate(accounts):
        if a in queried:
            qb[i] = blocks[i]
    return queried, qb


def write_predictions(path, accounts, left, right, prob, label, cluster, emit="positives"):
    sel = np.flatnonzero(np.asarray(label) == 1) if emit == "positives" else \
        np.arange(left.size)
    order = sel[np.lexsort((right[sel], left[sel]))]
    names = np.asarray(accounts, dtype=object)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_FIELDS)
        for s in range(0, order.size, 200_000):
            o = order[s:s + 200_000]
            w.writerows(zip(names[left[o]], names[right[o]],
                            (f"{x:.6f}" for x in prob[o].tolist()), label[o].tolist(),
                            cluster[o].tolist()))


def read_predictions(path):
    """``(u, v, prob, label, cluster)`` columns of a predictions file."""
    us, vs, ps, ys, cs = [], [], [], [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not set(PREDICTION_FIELDS[:4]) <= set(reader.fieldnames):
            raise DataError(f"{path}: predictions need columns {','.join(PREDICTION_FIELDS)}")
        for row in reader:
            u, v = row["u"], row["v"]
            us.append(min(u, v))
            vs.append(max(u, v))
            ps.append(float(row["prob"]))
            ys.append(int(row["label"]))
            cs.append(int(row.get("source_cluster") or 0))
    return us, vs, np.asarray(ps), np.asarray(ys, dtype=np.int8), np.asarray(cs)


def _alt_audit(alt_labels, owner, left, right) -> dict:
    known = (alt_labels >= 0) & (owner[left] >= 0) & (owner[right] >= 0)
    same = owner[left] == owner[right]
    wrong = known & (same != (alt_labels == 1))
    n = int(known.sum())
    return {"alt_audited": n, "alt_conflicts": int(wrong.sum()),
            "alt_conflict_rate": float(wrong.sum() / n) if n else 0.0,
            "alt_pos_precision": float((same & (alt_labels == 1)).sum() /
                                       max(1, int((alt_labels == 1).sum())))}


def run_pipeline(cfg: PipelineConfig, cache: Optional[StageCache] = None) -> PipelineResult:
    """Run ``cfg.method`` end to end; see the module docstring for the stages."""
    cfg.validate()
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    if cache is None:
        cache = StageCache(cfg.cache_dir or out / "cache")
    timings: dict[str, float] = {}
    info: dict = {"method": cfg.method, "seed": cfg.seed}
    t_start = time.perf_counter()

    with _stage("graph", timings):
        g, owners, meta, gkey = prepare_graph(cfg, cache, info)
        if g.n_accounts < 2:
            raise DataError("fewer than two accounts survive cleaning")
        accounts = g.accounts
        _place(cache.file("graph", gkey, ".txt") if not cfg.graph else Path(cfg.graph),
               out / "graph.txt", g.save)
        (out / "clean.json").write_text(json.dumps(
            {"threshold": meta.get("threshold"), "removed": meta.get("removed", []),
             "accounts": g.n_accounts, "pages": g.n_pages, "edges": g.n_edges}, indent=1),
            encoding="utf-8")
        if cfg.simulate.enabled:
            _place(cache.file("graph", gkey, ".owners.csv"), out / "ownership.csv", owners.save)
        owner = owners.codes(accounts)
        info.update(accounts=g.n_accounts, pages=g.n_pages, edges=g.n_edges,
                    removed=len(meta.get("removed", [])), activities=meta.get("activities"))

    need_katz = cfg.method != "semi-embed" or cfg.truth.use_alternative
    s = None
    if need_katz:
        with _stage("katz", timings):
            s, skey = compute_similarity(cfg, g, gkey, cache)
            src = Path(cfg.similarity) if cfg.similarity else cache.file("katz", skey, ".bin")
            if src is not None and src.exists() and Path(f"{src}.ids").exists():
                _place(src, out / "similarity.bin", s.save)
                _place(Path(f"{src}.ids"), out / "similarity.bin.ids", None)
            else:
                s.save(out / "similarity.bin")
            info.update(beta=s.beta, katz_converged=bool(s.converged))

    if cfg.method == "unsup-katz":
        if cfg.cluster.c != 1:
            log.info("unsup-katz scores all pairs; cluster.c is ignored")
        with _stage("predict", timings):
            left, right = triu_pairs(len(accounts))
            scores = s.account_block()[left, right]
            thr = float(np.percentile(scores, cfg.katz.alpha))
            hard = (scores > thr).astype(np.int8)
            smax = s.max_account_pair()
            prob = scores / smax if smax > 0 else np.zeros_like(scores)
            comp = np.zeros(left.size, dtype=np.int16)
            info.update(threshold=thr, n_candidates=int(left.size))
            converged = bool(s.converged)
            qb = None
    else:
        scfg_seed = cfg.stage_seed("spread", cfg.spread.seed)
        if cfg.method == "semi-embed":
            with _stage("embed", timings):
                (emb, einfo), ekey = compute_embedding(cfg, g, gkey, cache)
                src = Path(cfg.embeddings) if cfg.embeddings else cache.file("embed", ekey, ".txt")
                _place(src, out / "embeddings.txt", emb.save)
                vectors = emb.rows(accounts)
                info.update(einfo)
            with _stage("cluster", timings):
                ca = compute_clusters(cfg, vectors, accounts, ekey, cache)
                ca.save(out / "clusters.csv")
                left, right, comp = candidate_pairs(ca)
                blocks = ca.labels
                feature = EmbeddingFeature(vectors, cfg.embed.operator)
                info.update(cluster_sizes=ca.sizes().tolist(), n_candidates=int(left.size),
                            reduction=n_pairs(len(accounts)) / max(1, left.size))
        else:
            if cfg.cluster.c != 1:
                log.info("semi-katz spreads over all pairs; cluster.c is ignored")
            left, right = triu_pairs(len(accounts))
            comp = np.zeros(left.size, dtype=np.int16)
            blocks = np.zeros(len(accounts), dtype=np.int64)
            feature = KatzFeature(s, cfg.katz.epsilon)
            info.update(n_candidates=int(left.size))

        with _stage("truth", timings):
            if cfg.truth.fraction > 0 and not owners:
                raise DataError("no ground truth available to query; provide truth.path or "
                                "set truth.fraction=0 with truth.use_alternative")
            queried, qb = _queried_blocks(cfg, accounts, blocks, owners,
                                          cfg.stage_seed("truth", cfg.truth.seed))
            with open(out / "queried.txt", "w", encoding="utf-8") as fh:
                fh.writelines(a + "\n" for a in sorted(queried))
            labels = label_pairs(left, right, accounts, queried, owners)
            info.update(queried=len(queried), labelled_pos=int((labels == 1).sum()),
                        labelled_neg=int((labels == 0).sum()))
            if cfg.truth.use_alternative:
                alt = alternative_ground_truth(s, cfg.truth.high_pct, cfg.truth.low_pct,
                                               left, right)
                info.update(alt_pos=alt.n_pos, alt_neg=alt.n_neg, alt_high=alt.high,
                            alt_low=alt.low, **_alt_audit(alt.labels, owner, left, right))
                labels = merge_labels(labels, alt.labels)
                del alt

        with _stage("spread", timings):
            converged = True
            per_block = []
            n_blocks = int(comp.max()) + 1 if comp.size else 0
            if n_blocks <= 1:
                # a single block spreads over the arrays as they are, without copies
                scfg = cfg.spread.spread_config(derive_seed(scfg_seed, "block0"))
                data = PairDataset(accounts, left, right, labels, feature)
                del labels
                prob, hard, rank, converged, binfo = _spread_block(data, scfg)
                per_block.append(dict(binfo, block=0, pairs=int(left.size), converged=converged))
                data = None
            else:
                prob = np.zeros(left.size)
                rank = np.zeros(left.size)
                hard = np.zeros(left.size, dtype=np.int8)
                order = np.argsort(comp, kind="stable")
                bounds = np.searchsorted(comp[order], np.arange(n_blocks + 1))
                for k in range(n_blocks):
                    idx = order[bounds[k]:bounds[k + 1]]
                    if idx.size == 0:
                        continue
                    data = PairDataset(accounts, left[idx], right[idx], labels[idx], feature)
                    scfg = cfg.spread.spread_config(derive_seed(scfg_seed, f"block{k}"))
                    p, h, sc, conv, binfo = _spread_block(data, scfg)
                    prob[idx], hard[idx], rank[idx] = p, h, sc
                    converged &= conv
                    per_block.append(dict(binfo, block=k, pairs=int(idx.size), converged=conv))
                # the last block's copies would otherwise stay alive through evaluation
                del labels, order
                data = p = h = sc = idx = None
            info["blocks"] = per_block

    with _stage("write", timings):
        write_predictions(out / "predictions.csv", accounts, left, right, prob, hard, comp,
                          cfg.emit)
        del prob
    report = None
    with _stage("evaluate", timings):
        if owners:
            report = population_report(owner, left, right, hard,
                                       scores if cfg.method == "unsup-katz" else rank, qb)
    info["timings"] = timings
    info["seconds"] = round(time.perf_counter() - t_start, 3)
    info["converged"] = bool(converged)
    payload = dict(info)
    if report is not None:
        report.extra.update(info)
        payload = report.as_dict(verbose=True)
    payload["config"] = cfg.as_dict()
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True, default=str),
                                     encoding="utf-8")
    return PipelineResult(report, out / "predictions.csv", bool(converged), info)


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepResult:
    parameter: str
    rows: list[dict]
    csv_path: Path
    figures: list[Path]


def sweep_config(base: PipelineConfig, parameter: str, value, output) -> PipelineConfig:
    """The pipeline configuration of one sweep point."""
    cfg = base.replace()
    cfg.output = str(output)
    if parameter == "density":
        if not cfg.simulate.enabled:
            raise ConfigError("the density sweep needs simulate.s")
        cfg.simulate.density = float(value)
    elif parameter == "splits":
        cfg.simulate.s = int(value)
    elif parameter == "alpha":
        if cfg.method != "unsup-katz":
            log.info("alpha only acts on the Katz threshold; sweeping unsup-katz")
            cfg.method = "unsup-katz"
        cfg.katz.alpha = float(value)
    elif parameter == "d":
        cfg.embed.d = int(value)
    elif parameter == "pq":
        r = float(value)
        if r <= 0:
            raise ConfigError("p/q ratios must be positive")
        cfg.embed.p, cfg.embed.q = math.sqrt(r), 1.0 / math.sqrt(r)
    elif parameter == "clusters":
        cfg.cluster.c = int(value)
    else:
        raise ConfigError(f"unknown sweep parameter {parameter!r}; one of {SWEEP_PARAMETERS}")
    return cfg


SWEEP_FIELDS = ("parameter", "value", "method") + EvalReport.CSV_FIELDS + (
    "n_candidates", "seconds")


def run_sweep(base: PipelineConfig, parameter: str, values: Sequence, output=None,
              plot: bool = True) -> SweepResult:
    """One pipeline run per value (seeds fixed), aggregated into ``sweep.csv``."""
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(f"unknown sweep parameter {parameter!r}; one of {SWEEP_PARAMETERS}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    out = Path(output or base.output)
    out.mkdir(parents=True, exist_ok=True)
    cfgs = [sweep_config(base, parameter, v, out / f"{parameter}={v}") for v in values]
    for c in cfgs:
        c.validate()
    cache = StageCache(base.cache_dir or out / "cache")
    rows = []
    for v, c in zip(values, cfgs):
        res = run_pipeline(c, cache)
        row = {"parameter": parameter, "value": v, "method": c.method,
               "n_candidates": res.info.get("n_candidates"), "seconds": res.info["seconds"]}
        rep = res.report
        for k in EvalReport.CSV_FIELDS:
            row[k] = getattr(rep, k) if rep is not None else None
        rows.append(row)
        log.info("sweep %s=%s: auc=%s f1=%s", parameter, v, row["auc"], row["f1"])
    csv_path = out / "sweep.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, SWEEP_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{x:.6f}" if isinstance(x, float) else x) for k, x in r.items()})
    figures = []
    if plot:
        from .plotting import plot_sweep
        figures = plot_sweep(rows, parameter, out)
    return SweepResult(parameter, rows, csv_path, figures)
