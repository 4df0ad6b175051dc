"""Subject-level aggregation, ROC analysis, metrics, baselines and KS test."""
from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .errors import EmptySample, EmptySubject, SingleClass


@dataclass
class SubjectResult:
    subject_id: str
    label: int
    window_probs: np.ndarray

    @property
    def pi_hat(self) -> float:
        return aggregate_subject(self.window_probs)


def aggregate_subject(window_probs) -> float:
    """Bernoulli maximum-likelihood patient probability: the mean of ``Y_n``."""
    y = np.asarray(window_probs, dtype=np.float64)
    if y.size == 0:
        raise EmptySubject("subject has no windows")
    return float(y.mean())


def subject_results(subject_ids, labels, window_probs) -> list[SubjectResult]:
    """Group window-level predictions by subject (sorted by subject id)."""
    groups: dict[str, list[int]] = defaultdict(list)
    for i, sid in enumerate(subject_ids):
        groups[str(sid)].append(i)
    labels = np.asarray(labels)
    probs = np.asarray(window_probs, dtype=np.float64)
    out = []
    for sid in sorted(groups):
        idx = groups[sid]
        out.append(SubjectResult(sid, int(labels[idx[0]]), probs[idx]))
    return out


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # descending; the first is +inf
    auc: float

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))


def roc_curve(scores, labels) -> RocCurve:
    """Threshold sweep over the unique scores, patient (1) as positive class.

    A point at threshold ``t`` counts ``score >= t`` as positive; tied scores
    move the curve in a single step. AUC is the trapezoidal area.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC needs both classes")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y == 1)
    fp = np.cumsum(y == 0)
    last_of_group = np.r_[np.diff(s) != 0, True]
    tpr = np.r_[0.0, tp[last_of_group] / n_pos]
    fpr = np.r_[0.0, fp[last_of_group] / n_neg]
    thresholds = np.r_[np.inf, s[last_of_group]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, auc)


def roc_auc(scores, labels) -> float:
    return roc_curve(scores, labels).auc


def youden_threshold(curve: RocCurve) -> tuple[float, float]:
    """Return ``(threshold, J)`` maximizing ``TPR - FPR``.

    Ties go to the lowest threshold. The +inf starting point is never
    chosen unless it is the only point.
    """
    j = curve.tpr - curve.fpr
    candidates = np.flatnonzero(j >= j[1:].max() - 1e-12)
    candidates = candidates[candidates > 0]
    best = candidates[-1] if candidates.size else 0
    return float(curve.thresholds[best]), float(j[best])


@dataclass
class MetricsReport:
    auc: float
    precision: float
    recall: float
    f1: float
    balanced_accuracy: float
    threshold: float
    std: dict[str, float] | None = None

    METRICS = ("auc", "precision", "recall", "f1", "balanced_accuracy")

    def as_dict(self) -> dict:
        out = {m: getattr(self, m) for m in self.METRICS}
        out["threshold"] = self.threshold
        if self.std is not None:
            out["std"] = dict(self.std)
        return out


def confusion(scores, labels, threshold) -> tuple[int, int, int, int]:
    """``(tp, fp, fn, tn)`` with ``score >= threshold`` predicted positive."""
    pred = np.asarray(scores) >= threshold
    labels = np.asarray(labels).astype(bool)
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    tn = int(np.sum(~pred & ~labels))
    return tp, fp, fn, tn


def metrics_from_confusion(tp: int, fp: int, fn: int, tn: int) -> dict[str, float]:
    if tp + fn == 0 or fp + tn == 0:
        raise SingleClass("balanced accuracy needs both classes")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    specificity = tn / (tn + fp)
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "balanced_accuracy": (recall + specificity) / 2.0,
    }


def classification_metrics(
    results: Sequence[SubjectResult] | None = None,
    threshold: float = 0.5,
    *,
    scores=None,
    labels=None,
) -> MetricsReport:
    """Metrics at ``threshold`` from subject results (or raw score/label arrays)."""
    if results is not None:
        scores = np.array([r.pi_hat for r in results])
        labels = np.array([r.label for r in results])
    m = metrics_from_confusion(*confusion(scores, labels, threshold))
    return MetricsReport(auc=roc_auc(scores, labels), threshold=float(threshold), **m)


def summarize_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Mean over folds, with the population std per metric in ``std``."""
    vals = {m: np.array([getattr(r, m) for r in reports]) for m in MetricsReport.METRICS}
    thr = np.array([r.threshold for r in reports])
    return MetricsReport(
        **{m: float(v.mean()) for m, v in vals.items()},
        threshold=float(thr.mean()),
        std={m: float(v.std()) for m, v in vals.items()},
    )


def format_mean_std(mean: float, std: float | None) -> str:
    if std is None:
        return f"{mean:.2f} (N/A)"
    return f"{mean:.2f} ({std:.2f})"


class TrivialKind(enum.Enum):
    IMBALANCED = "imbalanced"
    MAJORITY_ALWAYS = "majority_always"


def trivial_classifier(
    kind: TrivialKind | str,
    labels,
    p: float = 0.86,
    sims: int = 1000,
    seed: int = 0,
) -> MetricsReport:
    """Untrained reference classifiers.

    ``IMBALANCED`` predicts the patient class i.i.d. with probability ``p``;
    its scores are ``(prediction + u) / 2`` with ``u ~ U(0, 1)``, so they are
    tie-free and thresholding at 0.5 reproduces the predictions. Metrics are
    averaged over ``sims`` simulations. ``MAJORITY_ALWAYS`` gives every
    subject the same score and predicts the patient class; it has no
    variability (``std`` is None).
    """
    kind = TrivialKind(kind)
    labels = np.asarray(labels).astype(int)
    if labels.size == 0:
        raise EmptySample("no labels")
    if kind is TrivialKind.MAJORITY_ALWAYS:
        scores = np.ones(labels.size)
        return classification_metrics(scores=scores, labels=labels, threshold=1.0)
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(sims):
        pred = rng.random(labels.size) < p
        scores = (pred + rng.random(labels.size)) / 2.0
        reports.append(classification_metrics(scores=scores, labels=labels, threshold=0.5))
    return summarize_reports(reports)


def ks_test(probs_a, probs_b) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.

    The p-value is the Kolmogorov limiting distribution evaluated at
    ``sqrt(n_a n_b / (n_a + n_b)) * D``.
    """
    a = np.asarray(probs_a, dtype=np.float64)
    b = np.asarray(probs_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise EmptySample("KS test needs two nonempty samples")
    with np.errstate(divide="ignore"):  # scipy's own p-value is unused and may divide by zero
        d = float(stats.ks_2samp(a, b, alternative="two-sided", method="asymp").statistic)
    en = a.size * b.size / (a.size + b.size)
    return d, float(stats.kstwobign.sf(np.sqrt(en) * d))


@dataclass
class SubjectEmbedding:
    subject_id: str
    label: int
    vector: np.ndarray = field(repr=False)


def average_embeddings(subject_ids, labels, embeddings) -> list[SubjectEmbedding]:
    """Mean window embedding per subject (sorted by subject id)."""
    groups: dict[str, list[int]] = defaultdict(list)
    for i, sid in enumerate(subject_ids):
        groups[str(sid)].append(i)
    emb = np.asarray(embeddings)
    labels = np.asarray(labels)
    return [
        SubjectEmbedding(sid, int(labels[idx[0]]), emb[idx].mean(axis=0))
        for sid, idx in sorted(groups.items())
    ]


def pooled_scores(per_model: Iterable[dict[str, float]]) -> dict[str, float]:
    """Average per-subject scores across models (e.g. the CV fold models)."""
    acc: dict[str, list[float]] = defaultdict(list)
    for scores in per_model:
        for sid, s in scores.items():
            acc[sid].append(s)
    return {sid: float(np.mean(v)) for sid, v in sorted(acc.items())}
