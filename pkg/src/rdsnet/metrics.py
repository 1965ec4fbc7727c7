"""Saliency evaluation: MAE, threshold-swept precision/recall and F-measure.

Predictions are compared on the 8-bit level scale: a float map in [0, 1] is
quantized with ``rint(255 * p)``, and a pixel is positive at threshold ``t``
when its level is strictly greater than ``t``. Ground truths are binarized
at half intensity.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

AGGREGATIONS = ("per-image-mean", "pooled")


@dataclass(frozen=True)
class MetricConfig:
    beta_squared: float = 0.3
    thresholds: tuple = tuple(range(256))
    aggregation: str = "per-image-mean"

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=float)
        if t.size == 0 or np.any(np.diff(t) <= 0):
            raise ValueError("thresholds must be non-empty and strictly increasing")
        if self.beta_squared <= 0:
            raise ValueError(f"beta_squared must be positive, got {self.beta_squared}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")


@dataclass
class EvalReport:
    mae: float
    pr_points: list  # (threshold, precision, recall)
    f_scores: list
    max_f: float
    argmax_threshold: float
    image_count: int
    aggregation: str
    alternate: "EvalReport | None" = field(default=None, repr=False)


def to_unit(m):
    """Rescale a map to [0, 1]: integer maps are divided by 255."""
    m = np.asarray(m)
    if m.dtype == bool:
        return m.astype(np.float64)
    if np.issubdtype(m.dtype, np.integer):
        return m.astype(np.float64) / 255.0
    return m.astype(np.float64)


def to_levels(m):
    """Integer 0..255 levels of a prediction map."""
    m = np.asarray(m)
    if np.issubdtype(m.dtype, np.integer):
        return m.astype(np.int64)
    return np.rint(np.clip(to_unit(m), 0.0, 1.0) * 255.0).astype(np.int64)


def gt_binary(gt):
    return to_unit(gt) >= 0.5


def mae(pred, gt):
    pred, gt = to_unit(pred), to_unit(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"mae needs equal shapes, got {pred.shape} and {gt.shape}")
    return float(np.abs(pred - gt).mean())


def binarize(m, threshold):
    return np.asarray(m) > threshold


def f_measure(precision, recall, beta_squared=0.3):
    denom = beta_squared * precision + recall
    if denom == 0:
        return 0.0
    return (1.0 + beta_squared) * precision * recall / denom


def confusion_counts(pred, gt, thresholds):
    """True-positive, false-positive and false-negative counts at every threshold."""
    levels = to_levels(pred)
    positive = gt_binary(gt)
    if levels.shape != positive.shape:
        raise ValueError(f"prediction shape {levels.shape} does not match ground truth shape {positive.shape}")
    t = np.asarray(thresholds, dtype=float)
    pos_levels = np.sort(levels[positive])
    neg_levels = np.sort(levels[~positive])
    tp = pos_levels.size - np.searchsorted(pos_levels, t, side="right")
    fp = neg_levels.size - np.searchsorted(neg_levels, t, side="right")
    fn = pos_levels.size - tp
    return tp.astype(np.int64), fp.astype(np.int64), fn.astype(np.int64)


def precision_recall(tp, fp, fn):
    """Vectorised precision/recall with the empty-set conventions.

    No predicted positives: precision is 1 if the ground truth is also empty,
    else 0. Empty ground truth: recall is 1.
    """
    tp, fp, fn = (np.asarray(a, dtype=np.float64) for a in (tp, fp, fn))
    predicted = tp + fp
    actual = tp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, tp / np.where(predicted > 0, predicted, 1.0),
                             np.where(actual == 0, 1.0, 0.0))
        recall = np.where(actual > 0, tp / np.where(actual > 0, actual, 1.0), 1.0)
    return precision, recall


def _pair(preds, gts):
    if isinstance(preds, dict) or isinstance(gts, dict):
        if not (isinstance(preds, dict) and isinstance(gts, dict)):
            raise ValueError("preds and gts must both be mappings or both be sequences")
        missing_gt = sorted(set(preds) - set(gts))
        missing_pred = sorted(set(gts) - set(preds))
        if missing_gt or missing_pred:
            raise ValueError(f"unpaired entries: no ground truth for {missing_gt}, no prediction for {missing_pred}")
        names = list(preds)
        return names, [preds[n] for n in names], [gts[n] for n in names]
    preds, gts = list(preds), list(gts)
    if len(preds) != len(gts):
        raise ValueError(f"unpaired entries: {len(preds)} predictions vs {len(gts)} ground truths")
    return [str(i) for i in range(len(preds))], preds, gts


def _aggregate(counts, thresholds, aggregation, beta_squared):
    if aggregation == "pooled":
        tp = sum(c[0] for c in counts)
        fp = sum(c[1] for c in counts)
        fn = sum(c[2] for c in counts)
        precision, recall = precision_recall(tp, fp, fn)
    else:
        precision = np.zeros(len(thresholds))
        recall = np.zeros(len(thresholds))
        for tp, fp, fn in counts:
            p, r = precision_recall(tp, fp, fn)
            precision += p
            recall += r
        precision /= len(counts)
        recall /= len(counts)
    f = [f_measure(float(p), float(r), beta_squared) for p, r in zip(precision, recall)]
    points = [(float(t), float(p), float(r)) for t, p, r in zip(thresholds, precision, recall)]
    best = int(np.argmax(f))
    return points, f, f[best], float(thresholds[best])


def evaluate(preds, gts, config=MetricConfig(), both=False):
    """Evaluate paired prediction / ground-truth maps.

    ``preds`` and ``gts`` are equal-length sequences or mappings keyed by
    name. With ``both=True`` the report for the other aggregation is attached
    as ``alternate``.
    """
    names, preds, gts = _pair(preds, gts)
    if not preds:
        raise ValueError("cannot evaluate an empty set")
    counts = []
    maes = []
    for name, p, g in zip(names, preds, gts):
        if np.shape(p) != np.shape(g):
            raise ValueError(f"shape mismatch for {name}: prediction {np.shape(p)} vs ground truth {np.shape(g)}")
        counts.append(confusion_counts(p, g, config.thresholds))
        maes.append(mae(p, g))
    thresholds = list(config.thresholds)
    mean_mae = float(sum(maes) / len(maes))

    def build(aggregation):
        points, f, max_f, arg = _aggregate(counts, thresholds, aggregation, config.beta_squared)
        return EvalReport(mae=mean_mae, pr_points=points, f_scores=f, max_f=max_f, argmax_threshold=arg,
                          image_count=len(preds), aggregation=aggregation)

    report = build(config.aggregation)
    if both:
        other = [a for a in AGGREGATIONS if a != config.aggregation][0]
        report.alternate = build(other)
    return report


def report_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "precision", "recall", "f"])
    for (t, p, r), f in zip(report.pr_points, report.f_scores):
        w.writerow([repr(t), repr(p), repr(r), repr(f)])
    return buf.getvalue()


SUMMARY_HEADER = ["dataset", "image_count", "mae", "max_f", "argmax_threshold"]


def summary_csv(dataset, report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    w.writerow([dataset, report.image_count, repr(report.mae), repr(report.max_f), repr(report.argmax_threshold)])
    return buf.getvalue()


def read_report_csv(text):
    """Parse :func:`report_csv` output into ``(thresholds, precision, recall, f)`` lists."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["threshold", "precision", "recall", "f"]:
        raise ValueError("not a PR report CSV (bad header)")
    cols = list(zip(*[[float(v) for v in row] for row in rows[1:]])) or [(), (), (), ()]
    return tuple(list(c) for c in cols)
