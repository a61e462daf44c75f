"""Binary evaluation of pair predictions.

Accuracy is ``(tp + tn) / total``.  A variant with ``tp + fn`` in the
numerator is sometimes quoted; it is the positive-class share, not an
accuracy.  :meth:`EvalReport.as_dict` with ``verbose=True`` emits it as
``accuracy_tp_plus_fn`` so numbers computed either way can be compared.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import DataError


def confusion(pred, truth) -> tuple[int, int, int, int]:
    """``(tp, fp, tn, fn)`` over paired 0/1 arrays."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DataError(f"prediction/truth length mismatch: {pred.shape} vs {truth.shape}")
    p = pred == 1
    t = truth == 1
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(pred.size - tp - fp - fn)
    return tp, fp, tn, fn


@dataclass
class Rates:
    precision: float
    recall: float
    f1: float
    accuracy: float
    undefined: tuple[str, ...] = ()


def rates(tp: int, fp: int, tn: int, fn: int) -> Rates:
    """Precision, recall, F1 and accuracy; empty denominators give 0 and a flag."""
    undefined = []

    def ratio(num, den, name):
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    precision = ratio(tp, tp + fp, "precision")
    recall = ratio(tp, tp + fn, "recall")
    f1 = ratio(2 * tp, 2 * tp + fp + fn, "f1")
    accuracy = ratio(tp + tn, tp + fp + tn + fn, "accuracy")
    return Rates(precision, recall, f1, accuracy, tuple(undefined))


def _weighted_roc(scores, truth, weights=None):
    """Distinct thresholds (descending) with cumulative positive/negative counts.

    Counts are accumulated as integers when possible, which keeps ties and
    large weighted blocks exact and avoids float temporaries on big inputs.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(bool, copy=False)
    order = np.argsort(scores, kind="stable")[::-1]
    s = scores[order]
    t = truth[order]
    if weights is None:
        del order
    # one ROC vertex per distinct threshold
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), s.size - 1] if s.size else np.empty(0, int)
    if weights is None:
        tps = np.cumsum(t, dtype=np.int64)[last]
        fps = (last + 1) - tps
    else:
        w = np.asarray(weights)
        acc = np.int64 if np.issubdtype(w.dtype, np.integer) else np.float64
        w = w[order].astype(acc, copy=False)
        del order
        pos = np.where(t, w, 0)
        np.cumsum(pos, out=pos)
        np.cumsum(w, out=w)
        tps = pos[last]
        fps = w[last] - tps
    return s[last], tps.astype(np.float64), fps.astype(np.float64)


def roc_curve(scores, truth, weights=None):
    """``(thresholds, fpr, tpr)`` with a leading ``(inf, 0, 0)`` vertex."""
    thr, tps, fps = _weighted_roc(scores, truth, weights)
    P, N = tps[-1], fps[-1]
    if P == 0 or N == 0:
        raise DataError("ROC needs at least one positive and one negative")
    return (np.r_[np.inf, thr], np.r_[0.0, fps / N], np.r_[0.0, tps / P])


def roc_auc(scores, truth, weights=None) -> float:
    """Area under the ROC curve by the trapezoid rule over all thresholds.

    Tied scores form one diagonal segment, which is the same as counting a
    tied positive/negative pair as one half.  ``weights`` lets a block of
    identical pairs enter as a single weighted entry.
    """
    _, fpr, tpr = roc_curve(scores, truth, weights)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


@dataclass
class EvalReport:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f1: float
    accuracy: float
    auc: Optional[float]
    n_scored: int
    n_unknown: int = 0
    undefined: tuple[str, ...] = ()
    extra: dict = field(default_factory=dict)

    @property
    def accuracy_as_printed(self) -> float:
        total = self.tp + self.fp + self.tn + self.fn
        return (self.tp + self.fn) / total if total else 0.0

    def as_dict(self, verbose: bool = False) -> dict:
        d = asdict(self)
        d["undefined"] = list(self.undefined)
        extra = d.pop("extra")
        if verbose:
            d["accuracy_tp_plus_fn"] = self.accuracy_as_printed
        d.update(extra)
        return d

    def to_json(self, verbose: bool = False) -> str:
        return json.dumps(self.as_dict(verbose), indent=2, sort_keys=True)

    CSV_FIELDS = ("precision", "recall", "f1", "accuracy", "auc", "tp", "fp", "tn", "fn",
                  "n_scored", "n_unknown")

    def csv_row(self, header: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(self.CSV_FIELDS)
        w.writerow([_fmt(getattr(self, k)) for k in self.CSV_FIELDS])
        return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return v


def evaluate(pred, truth, scores=None, weights=None, n_unknown: int = 0) -> EvalReport:
    """Full report for 0/1 predictions against 0/1 truth.

    ``weights`` (integer counts) lets identical pairs enter once; used for
    the block of cross-cluster pairs that all share one score and label.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DataError("prediction/truth length mismatch")
    if weights is None:
        tp, fp, tn, fn = confusion(pred, truth)
        n = int(pred.size)
    else:
        w = np.asarray(weights, dtype=np.int64)
        p, t = pred == 1, truth == 1
        tp, fp = int(w[p & t].sum()), int(w[p & ~t].sum())
        fn, tn = int(w[~p & t].sum()), int(w[~p & ~t].sum())
        n = tp + fp + tn + fn
    r = rates(tp, fp, tn, fn)
    auc = None
    if scores is not None and 0 < tp + fn < n:
        auc = roc_auc(scores, truth, weights)
    return EvalReport(tp, fp, tn, fn, r.precision, r.recall, r.f1, r.accuracy, auc, n,
                      n_unknown, r.undefined)


def write_roc(path, scores, truth, weights=None):
    thr, fpr, tpr = roc_curve(scores, truth, weights)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for a, b, c in zip(thr, fpr, tpr):
            w.writerow([repr(float(a)), f"{b:.9g}", f"{c:.9g}"])
