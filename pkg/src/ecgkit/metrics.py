"""Classification metrics, aggregate statistics, and diagnosis-code maps.

The quantile and dispersion conventions here are deliberately pinned:
quantiles interpolate linearly at fractional index q * (n - 1) and the
coefficient of variation uses the sample (n - 1) standard deviation.
These are the unique conventions that reproduce the published aggregate
benchmark rows this module is tested against, so they are contractual.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass

import numpy as np

from .errors import EcgKitError


class LengthMismatch(EcgKitError):
    code = "length_mismatch"


class TooFew(EcgKitError):
    code = "too_few_values"


@dataclass(frozen=True)
class ConfusionCounts:
    classes: tuple
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    @property
    def support(self) -> np.ndarray:
        return self.tp + self.fn


@dataclass(frozen=True)
class AggregateStats:
    average: float
    median: float
    iqr: float
    cv: float


@dataclass(frozen=True)
class LabelMap:
    """Prefix rules mapping source diagnosis codes onto model classes.

    Overlapping prefixes that target different classes all apply (a code
    can belong to a superclass and its subtype simultaneously); duplicate
    prefixes pointing at different classes are rejected.
    """

    vocab: str
    rules: tuple

    def __post_init__(self):
        seen: dict = {}
        for prefix, cls in self.rules:
            if seen.setdefault(prefix, cls) != cls:
                raise ValueError(f"rule {prefix!r} maps to both {seen[prefix]!r} and {cls!r}")

    @property
    def classes(self) -> tuple:
        out = []
        for _, cls in self.rules:
            if cls not in out:
                out.append(cls)
        return tuple(out)


def as_label_sets(labels) -> list[set]:
    """Normalize per-sample labels (scalar or iterable) into sets."""
    out = []
    for item in labels:
        if isinstance(item, str):
            out.append({item})
        elif item is None:
            out.append(set())
        else:
            out.append(set(item))
    return out


def confusion_counts(truth, pred, classes) -> ConfusionCounts:
    truth = as_label_sets(truth)
    pred = as_label_sets(pred)
    if len(truth) != len(pred):
        raise LengthMismatch(f"{len(truth)} truth rows vs {len(pred)} predictions")
    classes = tuple(classes)
    tp = np.zeros(len(classes), dtype=int)
    fp = np.zeros(len(classes), dtype=int)
    fn = np.zeros(len(classes), dtype=int)
    for t, p in zip(truth, pred):
        for i, c in enumerate(classes):
            has_t, has_p = c in t, c in p
            tp[i] += has_t and has_p
            fp[i] += has_p and not has_t
            fn[i] += has_t and not has_p
    tn = len(truth) - tp - fp - fn
    return ConfusionCounts(classes=classes, tp=tp, fp=fp, fn=fn, tn=tn)


def f1_scores(truth, pred, classes) -> dict:
    """Per-class F1 (2tp / (2tp+fp+fn), 0/0 -> 0) plus macro and weighted
    means; zero-support classes count 0 in macro and drop out of weighted."""
    counts = confusion_counts(truth, pred, classes)
    denom = 2 * counts.tp + counts.fp + counts.fn
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(denom > 0, 2 * counts.tp / np.maximum(denom, 1), 0.0)
    support = counts.support
    weighted = float(np.dot(per_class, support) / support.sum()) if support.sum() else 0.0
    return {
        "per_class": {c: float(f) for c, f in zip(counts.classes, per_class)},
        "macro": float(per_class.mean()) if len(counts.classes) else 0.0,
        "weighted": weighted,
    }


def aggregate(values) -> AggregateStats:
    """Average, median, IQR, and CV of a list of scores.

    IQR = Q(.75) - Q(.25) with linear interpolation at q * (n - 1); CV is
    the sample standard deviation over the mean.
    """
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size < 2:
        raise TooFew("aggregate needs at least two values")
    mean = float(arr.mean())
    q25, q75 = np.quantile(arr, [0.25, 0.75])
    std = float(arr.std(ddof=1))
    cv = 0.0 if std == 0.0 else std / mean
    return AggregateStats(average=mean, median=float(np.median(arr)),
                          iqr=float(q75 - q25), cv=float(cv))


def map_labels(codes, label_map: LabelMap) -> list[set]:
    """Map source codes onto class sets by prefix matching.

    Every matching rule contributes its class, so a dual superclass plus
    subtype map yields both; unmatched codes map to the empty set. Class
    names map to themselves, making the operation idempotent over its
    output vocabulary.
    """
    targets = set(label_map.classes)
    out = []
    for code in codes:
        code = str(code).strip()
        matched = {cls for prefix, cls in label_map.rules if code.startswith(prefix)}
        if code in targets:
            matched.add(code)
        out.append(matched)
    return out


def load_label_rules(vocab: str, classes=None) -> LabelMap:
    """Load the shipped rule table, optionally restricted to target classes."""
    text = importlib.resources.files("ecgkit").joinpath("label_rules.tsv").read_text()
    rules = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        row_vocab, code, cls = line.split("\t")
        if row_vocab != vocab:
            continue
        if classes is not None and cls not in classes:
            continue
        rules.append((code, cls))
    if not rules:
        raise ValueError(f"no rules for vocab {vocab!r}")
    return LabelMap(vocab=vocab, rules=tuple(rules))


def evaluate_dataset(truth_sets, prob_rows, classes, threshold: float = 0.5) -> dict:
    """Threshold multi-label probabilities and report per-class and summary F1."""
    classes = tuple(classes)
    probs = np.atleast_2d(np.asarray(prob_rows, dtype=np.float64))
    truth = as_label_sets(truth_sets)
    if probs.shape[0] != len(truth):
        raise LengthMismatch(f"{len(truth)} truth rows vs {probs.shape[0]} probability rows")
    if probs.shape[1] != len(classes):
        raise LengthMismatch(f"{len(classes)} classes vs {probs.shape[1]} probability columns")
    pred = [{c for c, p in zip(classes, row) if p >= threshold} for row in probs]
    counts = confusion_counts(truth, pred, classes)
    scores = f1_scores(truth, pred, classes)
    table = {
        c: {
            "f1": scores["per_class"][c],
            "support": int(counts.support[i]),
            "tp": int(counts.tp[i]),
            "fp": int(counts.fp[i]),
            "fn": int(counts.fn[i]),
        }
        for i, c in enumerate(classes)
    }
    return {"per_class": table, "macro_f1": scores["macro"], "weighted_f1": scores["weighted"]}
