"""Threshold-based evaluation: ROC, AUC, EER, per-class F1.

Conventions, fixed across the toolkit: fake is the positive class (label 1),
a sample is predicted fake iff its score >= threshold, tied scores collapse
to a single ROC point, AUC is the trapezoidal area under the tie-collapsed
curve, and EER is read off the ROC polyline where the false-positive and
false-negative rates cross.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataError


class RocPoint(NamedTuple):
    fpr: float
    tpr: float
    threshold: float


@dataclass(frozen=True)
class RocCurve:
    """Tie-collapsed operating points, thresholds strictly descending.

    The first point is the predict-nothing-fake sentinel (0, 0, inf); the
    last classifies everything fake.
    """

    points: tuple[RocPoint, ...]
    n_real: int
    n_fake: int


def _check_labels(labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise DataError("labels must be a non-empty vector")
    if not np.isin(labels, (0, 1)).all():
        raise DataError("labels must be 0 (real) or 1 (fake)")
    return labels.astype(np.int64)


def roc_curve(scores, labels) -> RocCurve:
    """ROC of the rule ``predict fake iff score >= t``, t swept over the
    distinct scores in descending order."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_labels(labels)
    if scores.shape != labels.shape:
        raise DataError(
            f"scores and labels must align, got {scores.shape} and {labels.shape}"
        )
    if not np.all(np.isfinite(scores)):
        raise DataError("non-finite score")
    n_fake = int((labels == 1).sum())
    n_real = int(labels.size - n_fake)
    if n_real == 0 or n_fake == 0:
        raise DataError("ROC undefined for single-class labels")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    points = [RocPoint(0.0, 0.0, math.inf)]
    seen_fake = 0
    seen_real = 0
    for i in range(scores.size):
        if sorted_labels[i] == 1:
            seen_fake += 1
        else:
            seen_real += 1
        last_of_tie = i + 1 == scores.size or sorted_scores[i + 1] != sorted_scores[i]
        if last_of_tie:
            points.append(
                RocPoint(seen_real / n_real, seen_fake / n_fake, float(sorted_scores[i]))
            )
    return RocCurve(points=tuple(points), n_real=n_real, n_fake=n_fake)


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the ROC, in [0, 1]."""
    pts = curve.points
    terms = [
        (pts[i + 1].fpr - pts[i].fpr) * (pts[i].tpr + pts[i + 1].tpr) / 2.0
        for i in range(len(pts) - 1)
    ]
    return math.fsum(terms)


def eer(curve: RocCurve) -> float:
    """Equal error rate: the common value of fpr and fnr where the ROC
    polyline crosses fpr == 1 - tpr.

    The gap d = fpr + tpr - 1 runs from -1 at (0, 0) to +1 at (1, 1); the
    crossing vertex is returned exactly when one exists, otherwise the
    crossing segment is interpolated linearly.
    """
    pts = curve.points
    prev_gap = -1.0
    for i in range(1, len(pts)):
        gap = pts[i].fpr + pts[i].tpr - 1.0
        if gap >= 0.0:
            if gap == 0.0:
                return pts[i].fpr
            frac = -prev_gap / (gap - prev_gap)
            return pts[i - 1].fpr + frac * (pts[i].fpr - pts[i - 1].fpr)
        prev_gap = gap
    return 1.0  # unreachable: the final point always has gap +1


def f1_score(tp: int, fp: int, fn: int) -> tuple[float, bool]:
    """F1 = 2tp / (2tp + fp + fn); returns (0.0, True) when undefined."""
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 0.0, True
    return 2 * tp / denom, False


@dataclass(frozen=True)
class EvalReport:
    """Evaluation summary. f1_real, f1_fake, accuracy, eer, and auc are
    percentages in [0, 100], stored at full precision."""

    threshold: float
    n_real: int
    n_fake: int
    tp: int
    fp: int
    tn: int
    fn: int
    f1_real: float
    f1_fake: float
    accuracy: float
    eer: float
    auc: float
    warnings: tuple[str, ...] = ()
    member_ids: tuple[str, ...] | None = None
    curve: RocCurve | None = field(default=None, compare=False, repr=False)


def evaluate(
    scores,
    labels,
    threshold: float = 0.5,
    member_ids=None,
) -> EvalReport:
    """Score a labelled split: confusion counts at ``threshold`` plus the
    threshold-free ROC statistics."""
    threshold = float(threshold)
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"threshold must be in [0, 1], got {threshold}")
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_labels(labels)
    if scores.shape != labels.shape:
        raise DataError(
            f"scores and labels must align, got {scores.shape} and {labels.shape}"
        )
    if not np.all(np.isfinite(scores)):
        raise DataError("scores must lie in [0, 1]")
    if scores.min() < 0.0 or scores.max() > 1.0:
        raise DataError("scores must lie in [0, 1]")
    predicted = scores >= threshold
    actual = labels == 1
    tp = int((predicted & actual).sum())
    fp = int((predicted & ~actual).sum())
    tn = int((~predicted & ~actual).sum())
    fn = int((~predicted & actual).sum())
    warnings: list[str] = []
    f1_fake, undef = f1_score(tp, fp, fn)
    if undef:
        warnings.append("f1_fake undefined (no fake samples or predictions); set to 0")
    f1_real, undef = f1_score(tn, fn, fp)
    if undef:
        warnings.append("f1_real undefined (no real samples or predictions); set to 0")
    curve = roc_curve(scores, labels)
    return EvalReport(
        threshold=threshold,
        n_real=curve.n_real,
        n_fake=curve.n_fake,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        f1_real=100.0 * f1_real,
        f1_fake=100.0 * f1_fake,
        accuracy=100.0 * (tp + tn) / labels.size,
        eer=100.0 * eer(curve),
        auc=100.0 * auc(curve),
        warnings=tuple(warnings),
        member_ids=tuple(member_ids) if member_ids is not None else None,
        curve=curve,
    )


def render_report(report: EvalReport) -> str:
    """Plain-text report, one ``key: value`` per line in a stable order.

    Percentages print with one decimal; counts and the threshold are exact.
    """
    lines = []
    if report.member_ids is not None:
        lines.append(f"members: {', '.join(report.member_ids)}")
    lines.append(f"threshold: {report.threshold!r}")
    for name in ("n_real", "n_fake", "tp", "fp", "tn", "fn"):
        lines.append(f"{name}: {getattr(report, name)}")
    for name in ("f1_real", "f1_fake", "accuracy", "eer", "auc"):
        lines.append(f"{name}: {getattr(report, name):.1f}")
    for warning in report.warnings:
        lines.append(f"warning: {warning}")
    return "\n".join(lines) + "\n"


def format_eval_row(name: str, report: EvalReport) -> str:
    """One ampersand-delimited results row:
    name & f1_real & f1_fake & accuracy & eer & auc, one decimal each."""
    return (
        f"{name} & {report.f1_real:.1f} & {report.f1_fake:.1f} & "
        f"{report.accuracy:.1f} & {report.eer:.1f} & {report.auc:.1f}"
    )
