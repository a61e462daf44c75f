"""Activity ingestion and the account/page bipartite graph.

Accounts and pages are indexed separately, each side sorted by id.  In the
full adjacency matrix accounts come first (rows ``0..n_accounts-1``) followed
by pages.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, TextIO

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("account_id", "page_id")


@dataclass(frozen=True)
class ActivityRecord:
    account_id: str
    page_id: str
    weight: int = 1
    user_id: Optional[str] = None


@dataclass
class ParsedActivities:
    records: list[ActivityRecord]
    rejected: int = 0

    def __len__(self):
        return len(self.records)


def _coerce_row(row: dict) -> Optional[ActivityRecord]:
    account = (row.get("account_id") or "").strip()
    page = (row.get("page_id") or "").strip()
    if not account or not page:
        return None
    raw_w = row.get("weight")
    if raw_w is None or (isinstance(raw_w, str) and not raw_w.strip()):
        weight = 1
    else:
        try:
            wf = float(raw_w)
        except (TypeError, ValueError):
            return None
        if not wf.is_integer() or wf < 1:
            return None
        weight = int(wf)
    user = row.get("user_id")
    user = str(user).strip() if user not in (None, "") else None
    return ActivityRecord(account, page, weight, user or None)


def aggregate(records: Iterable[ActivityRecord]) -> list[ActivityRecord]:
    """Merge duplicate (account, page) records by summing weights.

    Output keeps the order of first appearance.
    """
    merged: dict[tuple[str, str], list] = {}
    owners: dict[str, Optional[str]] = {}
    for r in records:
        if r.weight < 1:
            raise DataError(f"weight must be >= 1, got {r.weight} for {r.account_id}")
        if r.user_id is not None:
            prev = owners.get(r.account_id)
            if prev is not None and prev != r.user_id:
                raise DataError(
                    f"account {r.account_id!r} has conflicting user_id {prev!r} / {r.user_id!r}"
                )
            owners[r.account_id] = r.user_id
        key = (r.account_id, r.page_id)
        if key in merged:
            merged[key][0] += r.weight
        else:
            merged[key] = [r.weight]
    return [
        ActivityRecord(a, p, w[0], owners.get(a)) for (a, p), w in merged.items()
    ]


def parse_activities(stream: TextIO | str, fmt: str = "csv") -> ParsedActivities:
    """Read activity rows from a CSV or JSONL text stream.

    Rows with an empty id or an invalid weight are skipped and counted in
    ``rejected``.  A CSV header lacking ``account_id`` or ``page_id`` is a
    :class:`ConfigError`.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    rows: list[ActivityRecord] = []
    rejected = 0
    if fmt == "csv":
        reader = csv.DictReader(stream)
        if reader.fieldnames is None:
            return ParsedActivities([], 0)
        header = [h.strip() for h in reader.fieldnames]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise ConfigError(f"activity CSV is missing column(s): {', '.join(missing)}")
        reader.fieldnames = header
        for row in reader:
            rec = _coerce_row(row)
            if rec is None:
                rejected += 1
            else:
                rows.append(rec)
    elif fmt == "jsonl":
        for line in stream:
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                rejected += 1
                continue
            rec = _coerce_row(obj) if isinstance(obj, dict) else None
            if rec is None:
                rejected += 1
            else:
                rows.append(rec)
    else:
        raise ConfigError(f"unknown activity format {fmt!r}")
    if rejected:
        log.warning("rejected %d malformed activity line(s)", rejected)
    return ParsedActivities(aggregate(rows), rejected)


def read_activities(path, fmt: Optional[str] = None) -> ParsedActivities:
    path = str(path)
    if fmt is None:
        fmt = "jsonl" if path.endswith((".jsonl", ".ndjson")) else "csv"
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_activities(fh, fmt)


def write_activities(records: Sequence[ActivityRecord], path, with_user: bool = False):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = ["account_id", "page_id", "weight"] + (["user_id"] if with_user else [])
        w.writerow(cols)
        for r in records:
            row = [r.account_id, r.page_id, r.weight]
            if with_user:
                row.append(r.user_id or "")
            w.writerow(row)


@dataclass(frozen=True)
class BipartiteGraph:
    """Undirected account/page graph stored as a sparse biadjacency matrix.

    ``biadj[i, j]`` is the aggregated activity count between account ``i``
    and page ``j``.
    """

    accounts: tuple[str, ...]
    pages: tuple[str, ...]
    biadj: sp.csr_matrix
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self._index is None:
            idx = {a: i for i, a in enumerate(self.accounts)}
            off = len(self.accounts)
            idx.update({p: off + j for j, p in enumerate(self.pages)})
            object.__setattr__(self, "_index", idx)

    @property
    def n_accounts(self) -> int:
        return len(self.accounts)

    @property
    def n_pages(self) -> int:
        return len(self.pages)

    @property
    def n_nodes(self) -> int:
        return self.n_accounts + self.n_pages

    @property
    def n_edges(self) -> int:
        return int(self.biadj.nnz)

    @property
    def nodes(self) -> tuple[str, ...]:
        return self.accounts + self.pages

    def index(self, node: str) -> int:
        return self._index[node]

    def is_account(self, node: str) -> bool:
        return self._index[node] < self.n_accounts

    def biadjacency(self, weighted: bool = False) -> sp.csr_matrix:
        if weighted:
            return self.biadj.astype(np.float64)
        b = self.biadj.copy().astype(np.float64)
        b.data[:] = 1.0
        return b

    def adjacency(self, weighted: bool = False) -> sp.csr_matrix:
        """Symmetric ``n_nodes x n_nodes`` adjacency, accounts first."""
        b = self.biadjacency(weighted)
        return sp.bmat([[None, b], [b.T, None]], format="csr",
                       dtype=np.float64) if self.n_nodes else sp.csr_matrix((0, 0))

    def account_degrees(self) -> np.ndarray:
        return np.diff(self.biadj.indptr)

    def restrict_accounts(self, keep: Iterable[str]) -> "BipartiteGraph":
        """Subgraph on the given accounts; pages left without edges are dropped."""
        keep = set(keep)
        rows = np.array([i for i, a in enumerate(self.accounts) if a in keep], dtype=np.int64)
        sub = self.biadj[rows]
        cols = np.flatnonzero(np.asarray(sub.getnnz(axis=0)) > 0)
        sub = sub[:, cols].tocsr()
        return BipartiteGraph(
            tuple(self.accounts[i] for i in rows),
            tuple(self.pages[j] for j in cols),
            sub,
        )

    def to_edgelist(self) -> str:
        coo = self.biadj.tocoo()
        lines = sorted(
            (self.accounts[i], self.pages[j], int(w))
            for i, j, w in zip(coo.row, coo.col, coo.data)
        )
        return "".join(f"{a},{p},{w}\n" for a, p, w in lines)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_edgelist())

    @classmethod
    def from_edgelist(cls, text: str | TextIO) -> "BipartiteGraph":
        if not isinstance(text, str):
            text = text.read()
        records = []
        for ln, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise DataError(f"graph dump line {ln}: expected u,v,w")
            records.append(ActivityRecord(parts[0], parts[1], int(parts[2])))
        return build_bipartite(records)

    @classmethod
    def load(cls, path) -> "BipartiteGraph":
        with open(path, encoding="utf-8") as fh:
            return cls.from_edgelist(fh.read())


def build_bipartite(records: Sequence[ActivityRecord]) -> BipartiteGraph:
    """Build the account/page graph; duplicates add up into edge weights."""
    weights: dict[tuple[str, str], int] = {}
    for r in records:
        key = (r.account_id, r.page_id)
        weights[key] = weights.get(key, 0) + r.weight
    accounts = sorted({a for a, _ in weights})
    pages = sorted({p for _, p in weights})
    both = set(accounts).intersection(pages)
    if both:
        tok = sorted(both)[0]
        raise DataError(f"token {tok!r} appears both as an account and as a page")
    a_idx = {a: i for i, a in enumerate(accounts)}
    p_idx = {p: j for j, p in enumerate(pages)}
    rows = np.fromiter((a_idx[a] for a, _ in weights), dtype=np.int64, count=len(weights))
    cols = np.fromiter((p_idx[p] for _, p in weights), dtype=np.int64, count=len(weights))
    data = np.fromiter(weights.values(), dtype=np.int64, count=len(weights))
    biadj = sp.csr_matrix((data, (rows, cols)), shape=(len(accounts), len(pages)))
    biadj.sort_indices()
    return BipartiteGraph(tuple(accounts), tuple(pages), biadj)


@dataclass(frozen=True)
class ProjectedGraph:
    """Account-side projection; edge weight = number of shared pages."""

    nodes: tuple[str, ...]
    adj: sp.csr_matrix

    def degrees(self) -> np.ndarray:
        return np.diff(self.adj.indptr)

    def weight(self, u: str, v: str) -> int:
        i, j = self.nodes.index(u), self.nodes.index(v)
        return int(self.adj[i, j])


def project_accounts(g: BipartiteGraph) -> ProjectedGraph:
    b = g.biadjacency(weighted=False)
    p = (b @ b.T).tocsr()
    p.setdiag(0)
    p.eliminate_zeros()
    p.data = np.rint(p.data)
    return ProjectedGraph(g.accounts, p.astype(np.int64))


def degree_threshold(v_size: int) -> float:
    if v_size < 1:
        raise ConfigError("V_size must be >= 1")
    return math.log10(v_size)


def filter_low_degree(gp: ProjectedGraph, v_size: int) -> set[str]:
    """Accounts whose projected degree exceeds ``log10(v_size)``."""
    thr = degree_threshold(v_size)
    deg = gp.degrees()
    return {a for a, d in zip(gp.nodes, deg) if d > thr}


@dataclass
class CleanResult:
    graph: BipartiteGraph
    removed: list[str]
    threshold: float


def clean_graph(g: BipartiteGraph) -> CleanResult:
    """Project, drop low-degree accounts once, and restrict the graph."""
    if g.n_nodes == 0:
        return CleanResult(g, [], 0.0)
    gp = project_accounts(g)
    keep = filter_low_degree(gp, g.n_nodes)
    removed = sorted(set(g.accounts) - keep)
    if removed:
        log.info("degree filter removed %d of %d accounts", len(removed), g.n_accounts)
    return CleanResult(g.restrict_accounts(keep), removed, degree_threshold(g.n_nodes))
