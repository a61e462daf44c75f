"""Ground truth: split-account simulation, query sampling, pair labelling and
Katz-derived alternative labels."""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .graphcore import ActivityRecord
from .katz import SimilarityMatrix
from .pairs import LABEL_NEG, LABEL_POS, LABEL_UNKNOWN, triu_pairs

log = logging.getLogger(__name__)


class OwnershipMap(dict):
    """account id -> owning user id."""

    @classmethod
    def from_records(cls, records: Iterable[ActivityRecord]) -> "OwnershipMap":
        out = cls()
        for r in records:
            if r.user_id is not None:
                out[r.account_id] = r.user_id
        return out

    def codes(self, accounts: Sequence[str]) -> np.ndarray:
        """Integer owner code per account; ``-1`` where the owner is unknown."""
        users: dict[str, int] = {}
        out = np.full(len(accounts), -1, dtype=np.int64)
        for i, a in enumerate(accounts):
            u = self.get(a)
            if u is not None:
                out[i] = users.setdefault(u, len(users))
        return out

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["account_id", "user_id"])
            for a in sorted(self):
                w.writerow([a, self[a]])

    @classmethod
    def load(cls, path) -> "OwnershipMap":
        out = cls()
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if not reader.fieldnames or not {"account_id", "user_id"} <= set(reader.fieldnames):
                raise ConfigError(f"{path}: truth file needs account_id,user_id columns")
            for row in reader:
                a, u = row["account_id"].strip(), row["user_id"].strip()
                if not a or not u:
                    continue
                if out.get(a, u) != u:
                    raise DataError(f"{path}: account {a!r} listed with two owners")
                out[a] = u
        return out


def split_accounts(records: Sequence[ActivityRecord], s: int, seed: int = 0,
                   min_activities: int = 1) -> tuple[list[ActivityRecord], OwnershipMap]:
    """Scatter each eligible account's activities over ``s`` new accounts.

    An activity of weight ``w`` counts as ``w`` unit activities, each placed
    independently and uniformly.  Accounts with fewer than
    ``min_activities`` unit activities keep their id.  Split ids are
    ``<original>~<k>``.  When there are at least ``s`` units the draw is
    repeated (then repaired) until no split is empty; with fewer units the
    empty splits are dropped.
    """
    if s < 1:
        raise ConfigError("splits per user s must be >= 1")
    by_account: dict[str, list[ActivityRecord]] = defaultdict(list)
    for r in records:
        by_account[r.account_id].append(r)
    rng = np.random.default_rng(seed)
    width = len(str(s - 1))
    out: list[ActivityRecord] = []
    owners = OwnershipMap()
    for acct in sorted(by_account):
        recs = by_account[acct]
        owner = recs[0].user_id or acct
        total = sum(r.weight for r in recs)
        if s == 1 or total < min_activities:
            owners[acct] = owner
            out.extend(ActivityRecord(r.account_id, r.page_id, r.weight, owner) for r in recs)
            continue
        units = np.repeat(np.arange(len(recs)), [r.weight for r in recs])
        dest = _assign_units(rng, units.size, s)
        counts: dict[tuple[int, int], int] = defaultdict(int)
        for k, rec_i in zip(dest.tolist(), units.tolist()):
            counts[(k, rec_i)] += 1
        for (k, rec_i) in sorted(counts):
            new_id = f"{acct}~{k:0{width}d}"
            owners[new_id] = owner
            out.append(ActivityRecord(new_id, recs[rec_i].page_id, counts[(k, rec_i)], owner))
    return out, owners


def subsample_activities(records: Sequence[ActivityRecord], per_account: int,
                         seed: int = 0) -> list[ActivityRecord]:
    """Keep at most ``per_account`` unit activities of every account.

    Units are drawn uniformly without replacement; accounts with fewer
    units keep all of them.  Used to set the activity density before a
    split.
    """
    if per_account < 1:
        raise ConfigError("activities per account must be >= 1")
    by_account: dict[str, list[ActivityRecord]] = defaultdict(list)
    for r in records:
        by_account[r.account_id].append(r)
    rng = np.random.default_rng(seed)
    out: list[ActivityRecord] = []
    for acct in sorted(by_account):
        recs = by_account[acct]
        weights = np.array([r.weight for r in recs])
        if weights.sum() <= per_account:
            out.extend(recs)
            continue
        units = np.repeat(np.arange(len(recs)), weights)
        keep = np.bincount(rng.choice(units, size=per_account, replace=False),
                           minlength=len(recs))
        out.extend(ActivityRecord(r.account_id, r.page_id, int(w), r.user_id)
                   for r, w in zip(recs, keep.tolist()) if w > 0)
    return out


def _assign_units(rng, n: int, s: int, tries: int = 50) -> np.ndarray:
    dest = rng.integers(0, s, size=n)
    if n < s:
        return dest
    for _ in range(tries):
        if np.bincount(dest, minlength=s).min() > 0:
            return dest
        dest = rng.integers(0, s, size=n)
    counts = np.bincount(dest, minlength=s)
    for k in np.flatnonzero(counts == 0):
        donor = int(np.argmax(counts))
        moved = rng.choice(np.flatnonzero(dest == donor))
        dest[moved] = k
        counts[donor] -= 1
        counts[k] += 1
    return dest


def sample_queried_nodes(accounts: Sequence[str], fraction: float, seed: int = 0) -> set[str]:
    """Uniform sample of ``ceil(fraction * n)`` accounts without replacement."""
    if not 0 < fraction <= 1:
        raise ConfigError("query fraction must lie in (0, 1]")
    accounts = list(accounts)
    k = math.ceil(fraction * len(accounts) - 1e-9)
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(accounts), size=k, replace=False) if k else []
    return {accounts[i] for i in pick}


def label_pairs(left: np.ndarray, right: np.ndarray, accounts: Sequence[str],
                queried: Iterable[str], truth: Mapping[str, str]) -> np.ndarray:
    """1/0 for pairs with both ends queried (same/different owner), else -1."""
    queried = set(queried)
    missing = [a for a in queried if a not in truth]
    if missing:
        raise DataError(f"queried account {sorted(missing)[0]!r} has no ground truth")
    q = np.fromiter((a in queried for a in accounts), dtype=bool, count=len(accounts))
    owner = OwnershipMap(truth).codes(accounts)
    both = q[left] & q[right]
    same = owner[left] == owner[right]
    out = np.full(left.shape, LABEL_UNKNOWN, dtype=np.int8)
    out[both & same] = LABEL_POS
    out[both & ~same] = LABEL_NEG
    return out


@dataclass
class AltTruth:
    labels: np.ndarray
    high: float
    low: float
    n_pos: int
    n_neg: int


def alternative_ground_truth(s: SimilarityMatrix, high_pct: float, low_pct: float,
                             left: np.ndarray, right: np.ndarray) -> AltTruth:
    """Label pairs from extreme Katz percentiles.

    Percentiles are taken over all account pairs of ``s``; pairs above the
    high value become 1, pairs below the low value 0, the rest -1.
    """
    if not low_pct < high_pct:
        raise ConfigError("low percentile must be below the high percentile")
    blk = s.account_block()
    a, b = triu_pairs(s.n_accounts)
    vals = blk[a, b]
    del a, b
    high, low = np.percentile(vals, [high_pct, low_pct])
    del vals
    if not high > low:
        raise DataError(
            f"alternative truth thresholds cross (high={high:.6g} <= low={low:.6g}); "
            "similarity is degenerate")
    sv = blk[left, right]
    out = np.full(left.shape, LABEL_UNKNOWN, dtype=np.int8)
    out[sv > high] = LABEL_POS
    out[sv < low] = LABEL_NEG
    n_pos, n_neg = int((out == LABEL_POS).sum()), int((out == LABEL_NEG).sum())
    log.info("alternative truth: %d positive, %d negative pair labels", n_pos, n_neg)
    return AltTruth(out, float(high), float(low), n_pos, n_neg)


def merge_labels(real: np.ndarray, alt: np.ndarray) -> np.ndarray:
    """Combine sampled and alternative labels; sampled labels win conflicts."""
    out = alt.copy()
    known = real != LABEL_UNKNOWN
    conflicts = int(((alt != LABEL_UNKNOWN) & known & (alt != real)).sum())
    if conflicts:
        log.warning("%d alternative labels conflict with queried truth; keeping queried", conflicts)
    out[known] = real[known]
    return out
