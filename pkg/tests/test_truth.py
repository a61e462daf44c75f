from collections import Counter

import numpy as np
import pytest
from scipy import stats

from multiacct.errors import ConfigError, DataError
from multiacct.graphcore import ActivityRecord
from multiacct.katz import SimilarityMatrix
from multiacct.pairs import triu_pairs
from multiacct.truth import (
    OwnershipMap,
    alternative_ground_truth,
    label_pairs,
    merge_labels,
    sample_queried_nodes,
    split_accounts,
    subsample_activities,
)


def user_log(n_units=150, user="u1", pages=10):
    return [ActivityRecord(user, f"p{k % pages}", 1, user) for k in range(n_units)]


def units(records):
    return sum(r.weight for r in records)


def test_s1_is_identity():
    recs = user_log(20) + user_log(5, "u2")
    out, owners = split_accounts(recs, 1)
    assert sorted((r.account_id, r.page_id, r.weight) for r in out) == \
        sorted((r.account_id, r.page_id, r.weight) for r in recs)
    assert owners == {"u1": "u1", "u2": "u2"}


def test_split_into_fifteen():
    recs = [ActivityRecord("u1", f"p{k}", 1, "u1") for k in range(150)]
    out, owners = split_accounts(recs, 15, seed=3)
    per = Counter()
    for r in out:
        per[r.account_id] += r.weight
    assert len(per) == 15
    assert sum(per.values()) == 150
    assert np.mean(list(per.values())) == pytest.approx(10)
    assert set(owners.values()) == {"u1"}


def test_weights_split_as_units():
    out, _ = split_accounts([ActivityRecord("u", "p", 40, "u")], 4, seed=0)
    assert units(out) == 40
    assert len({r.account_id for r in out}) == 4


def test_min_activities_keeps_small_accounts():
    out, owners = split_accounts(user_log(5, "small") + user_log(50, "big"), 5,
                                 min_activities=10)
    ids = {r.account_id for r in out}
    assert "small" in ids
    assert not any(a == "big" for a in ids)
    assert owners["small"] == "small"


def test_split_counts_multinomial():
    # the count of split 0 follows Binomial(n, 1/s) across seeds
    n, s = 60, 6
    counts = []
    for seed in range(400):
        out, _ = split_accounts(user_log(n, pages=n), s, seed=seed)
        counts.append(sum(r.weight for r in out if r.account_id.endswith("~0")))
    counts = np.array(counts)
    edges = [0, 7, 9, 11, 13, n + 1]
    obs = np.histogram(counts, bins=edges)[0]
    cdf = stats.binom.cdf(np.array(edges) - 1, n, 1 / s)
    exp = np.diff(cdf) * counts.size
    exp = exp * obs.sum() / exp.sum()
    assert stats.chisquare(obs, exp).pvalue > 1e-3


def test_bad_s():
    with pytest.raises(ConfigError):
        split_accounts(user_log(3), 0)


def test_subsample_caps_units():
    recs = [ActivityRecord("u", "p1", 30, "u"), ActivityRecord("u", "p2", 10, "u"),
            ActivityRecord("v", "p1", 3, "v")]
    out = subsample_activities(recs, 12, seed=1)
    by = Counter()
    for r in out:
        by[r.account_id] += r.weight
    assert by == {"u": 12, "v": 3}


def test_query_fraction_one_and_quarter():
    accts = [f"a{i}" for i in range(1000)]
    assert sample_queried_nodes(accts, 1.0) == set(accts)
    q = sample_queried_nodes(accts, 0.25, seed=1)
    assert len(q) == 250
    # both-ends-queried pair rate
    assert (250 * 249) / (1000 * 999) == pytest.approx(0.0623, abs=1e-3)
    assert q != sample_queried_nodes(accts, 0.25, seed=2)


def test_query_fraction_range():
    with pytest.raises(ConfigError):
        sample_queried_nodes(["a"], 0.0)


def test_label_pairs():
    accounts = ("a", "b", "c", "d")
    truth = {"a": "u1", "b": "u1", "c": "u2", "d": "u2"}
    left, right = triu_pairs(4)
    lab = label_pairs(left, right, accounts, {"a", "b", "c"}, truth)
    got = {(accounts[i], accounts[j]): int(y) for i, j, y in zip(left, right, lab)}
    assert got[("a", "b")] == 1
    assert got[("a", "c")] == 0
    assert got[("a", "d")] == -1 and got[("c", "d")] == -1


def test_label_pairs_missing_truth():
    left, right = triu_pairs(2)
    with pytest.raises(DataError):
        label_pairs(left, right, ("a", "b"), {"a", "b"}, {"a": "u"})


def test_ownership_roundtrip(tmp_path):
    m = OwnershipMap({"a~0": "a", "a~1": "a", "b": "b"})
    m.save(tmp_path / "own.csv")
    assert OwnershipMap.load(tmp_path / "own.csv") == m
    np.testing.assert_array_equal(m.codes(["b", "a~0", "zz", "a~1"]), [0, 1, -1, 1])


def _sim(n, rng):
    m = rng.random((n, n))
    m = (m + m.T) / 2
    return SimilarityMatrix(m, tuple(f"a{i}" for i in range(n)), n, 0.1, 1e-8)


def test_alternative_truth_thresholds():
    rng = np.random.default_rng(0)
    s = _sim(60, rng)
    left, right = triu_pairs(60)
    alt = alternative_ground_truth(s, 99.95, 80, left, right)
    vals = s.account_block()[left, right]
    assert alt.high == pytest.approx(np.percentile(vals, 99.95))
    assert alt.low == pytest.approx(np.percentile(vals, 80))
    assert alt.n_pos == int((vals > alt.high).sum()) >= 1
    assert alt.n_neg == int((vals < alt.low).sum())
    assert (alt.labels[vals > alt.high] == 1).all()


def test_alternative_truth_constant_fails():
    s = SimilarityMatrix(np.ones((5, 5)), tuple("abcde"), 5, 0.1, 1e-8)
    left, right = triu_pairs(5)
    with pytest.raises(DataError, match="cross"):
        alternative_ground_truth(s, 99.95, 80, left, right)


def test_merge_prefers_queried():
    real = np.array([1, -1, 0, -1], dtype=np.int8)
    alt = np.array([0, 1, -1, -1], dtype=np.int8)
    np.testing.assert_array_equal(merge_labels(real, alt), [1, 1, 0, -1])
