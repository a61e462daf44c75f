import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multiacct.errors import DataError
from multiacct.metrics import confusion, evaluate, rates, roc_auc, roc_curve, write_roc


def brute_auc(scores, truth):
    pos = scores[truth == 1]
    neg = scores[truth == 0]
    gt = (pos[:, None] > neg[None, :]).sum()
    eq = (pos[:, None] == neg[None, :]).sum()
    return (gt + 0.5 * eq) / (pos.size * neg.size)


def test_all_true():
    assert confusion(np.ones(5), np.ones(5)) == (5, 0, 0, 0)


def test_inverted():
    t = np.array([1, 0, 1, 1, 0])
    tp, fp, tn, fn = confusion(1 - t, t)
    assert tp == 0 and tn == 0


def test_length_mismatch():
    with pytest.raises(DataError):
        confusion([1, 0], [1])


def test_confusion_recount():
    rng = np.random.default_rng(0)
    p, t = rng.integers(0, 2, 200), rng.integers(0, 2, 200)
    counts = {(1, 1): 0, (1, 0): 0, (0, 0): 0, (0, 1): 0}
    for a, b in zip(p, t):
        counts[(int(a), int(b))] += 1
    assert confusion(p, t) == (counts[(1, 1)], counts[(1, 0)], counts[(0, 0)], counts[(0, 1)])


def test_degenerate_rates():
    r = rates(0, 0, 7, 0)
    assert r.precision == 0 and r.recall == 0
    assert {"precision", "recall"} <= set(r.undefined)
    assert r.accuracy == 1.0


def test_rates_substitution():
    r = rates(3, 1, 4, 2)
    assert r.precision == pytest.approx(0.75)
    assert r.recall == pytest.approx(0.6)
    assert r.f1 == pytest.approx(2 / 3, abs=1e-4)
    assert r.accuracy == pytest.approx(0.7)


def test_perfect():
    r = rates(4, 0, 6, 0)
    assert (r.precision, r.recall, r.f1, r.accuracy) == (1, 1, 1, 1)


def test_auc_perfect_and_flat():
    t = np.array([0, 1, 0, 1, 1])
    assert roc_auc(t.astype(float), t) == 1.0
    assert roc_auc(np.zeros(5), t) == 0.5


def test_auc_single_class():
    with pytest.raises(DataError):
        roc_auc(np.arange(3.0), np.ones(3))


def test_auc_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(20):
        s = rng.integers(0, 6, 100).astype(float)
        t = rng.integers(0, 2, 100)
        assert abs(roc_auc(s, t) - brute_auc(s, t)) < 1e-12


def test_weights_equal_repetition():
    s = np.array([0.9, 0.5, 0.5, 0.1])
    t = np.array([1, 0, 1, 0])
    w = np.array([2, 3, 1, 4])
    rep_s = np.repeat(s, w)
    rep_t = np.repeat(t, w)
    assert roc_auc(s, t, w) == pytest.approx(roc_auc(rep_s, rep_t), abs=1e-12)


def test_infinite_scores_tie():
    s = np.array([1.0, -np.inf, -np.inf, 0.0])
    t = np.array([1, 1, 0, 0])
    assert roc_auc(s, t) == pytest.approx(brute_auc(s, t))


def test_roc_endpoints(tmp_path):
    s = np.array([0.3, 0.1, 0.8, 0.4])
    t = np.array([0, 0, 1, 1])
    thr, fpr, tpr = roc_curve(s, t)
    assert (fpr[0], tpr[0]) == (0, 0) and (fpr[-1], tpr[-1]) == (1, 1)
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)
    write_roc(tmp_path / "roc.csv", s, t)
    lines = (tmp_path / "roc.csv").read_text().splitlines()
    assert lines[0] == "threshold,fpr,tpr" and len(lines) == len(thr) + 1


def test_evaluate_report():
    t = np.array([1, 0, 1, 0, 0])
    p = np.array([1, 0, 0, 1, 0])
    rep = evaluate(p, t, scores=np.array([0.9, 0.1, 0.4, 0.6, 0.2]))
    assert (rep.tp, rep.fp, rep.tn, rep.fn) == (1, 1, 2, 1)
    d = json.loads(rep.to_json(verbose=True))
    assert d["accuracy_tp_plus_fn"] == pytest.approx(2 / 5)
    assert d["auc"] == pytest.approx(brute_auc(np.array([0.9, 0.1, 0.4, 0.6, 0.2]), t))
    header, row = rep.csv_row(header=True).splitlines()
    assert header.startswith("precision,recall,f1")
    assert len(row.split(",")) == len(header.split(","))


def test_evaluate_single_class_has_no_auc():
    rep = evaluate(np.zeros(3), np.zeros(3), scores=np.arange(3.0))
    assert rep.auc is None


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(-3, 3), st.booleans()), min_size=2, max_size=60))
def test_auc_property(rows):
    s = np.array([r[0] for r in rows], dtype=float)
    t = np.array([int(r[1]) for r in rows])
    if t.min() == t.max():
        return
    a = roc_auc(s, t)
    assert abs(a - brute_auc(s, t)) < 1e-12
    # reversing the ranking mirrors the area
    assert abs(roc_auc(-s, t) - (1 - a)) < 1e-12
