"""Ground-truth scoring: confusion counts, rates, and report aggregation.

Ground-truth masks follow the changedetection.net label convention:
255 is foreground, 0 is background, 50 marks shadow (scored as
background), 85 is outside the region of interest and 170 is unknown
(both excluded from scoring).  The aggregation shape is: confusion counts
are pooled per video, per-category scores are unweighted means over a
category's videos, and the overall row is the unweighted mean over
categories.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from typing import Iterable

import numpy as np


@dataclass(frozen=True)
class LabelPolicy:
    foreground: frozenset[int]
    background: frozenset[int]
    ignored: frozenset[int]


CDNET_POLICY = LabelPolicy(
    foreground=frozenset({255}),
    background=frozenset({0, 50}),
    ignored=frozenset({85, 170}),
)


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricsRecord:
    recall: float
    specificity: float
    fpr: float
    fnr: float
    precision: float
    f1: float


def split_labels(gt: np.ndarray, policy: LabelPolicy = CDNET_POLICY) -> tuple[np.ndarray, np.ndarray]:
    """Split a labeled mask into (foreground, ignored) boolean maps."""
    gt = np.asarray(gt)
    fg = np.isin(gt, list(policy.foreground))
    bg = np.isin(gt, list(policy.background))
    ign = np.isin(gt, list(policy.ignored))
    known = fg | bg | ign
    if not known.all():
        bad = sorted(int(v) for v in np.unique(gt[~known]))
        raise ValueError(f"unknown label value(s) in ground truth: {bad}")
    return fg, ign


def confusion(
    pred: np.ndarray, gt: np.ndarray, policy: LabelPolicy = CDNET_POLICY
) -> ConfusionCounts:
    """Count tp/fp/tn/fn of a predicted mask against a labeled ground truth."""
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"dimension mismatch: pred {pred.shape}, gt {gt.shape}")
    fg, ign = split_labels(gt, policy)
    valid = ~ign
    return ConfusionCounts(
        tp=int((pred & fg & valid).sum()),
        fp=int((pred & ~fg & valid).sum()),
        tn=int((~pred & ~fg & valid).sum()),
        fn=int((~pred & fg & valid).sum()),
    )


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def metrics(c: ConfusionCounts) -> MetricsRecord:
    """Table-style scores from confusion counts; 0/0 ratios score as 0."""
    recall = _ratio(c.tp, c.tp + c.fn)
    specificity = _ratio(c.tn, c.tn + c.fp)
    precision = _ratio(c.tp, c.tp + c.fp)
    f1 = _ratio(2 * precision * recall, precision + recall) if precision + recall else 0.0
    return MetricsRecord(
        recall=recall,
        specificity=specificity,
        fpr=_ratio(c.fp, c.fp + c.tn),
        fnr=_ratio(c.fn, c.fn + c.tp),
        precision=precision,
        f1=f1,
    )


def gt_threshold(rmap: np.ndarray, gt: np.ndarray, ignore: np.ndarray | None = None) -> int:
    """Threshold minimizing mask/ground-truth mismatch; ties take the smallest.

    ``gt`` is a boolean foreground map, ``ignore`` an optional boolean map
    of pixels excluded from the mismatch count.  Equivalent to exhaustive
    search over all 256 thresholds.
    """
    rmap = np.asarray(rmap)
    gt = np.asarray(gt).astype(bool)
    if rmap.shape != gt.shape:
        raise ValueError(f"dimension mismatch: rmap {rmap.shape}, gt {gt.shape}")
    valid = np.ones(rmap.shape, dtype=bool) if ignore is None else ~np.asarray(ignore).astype(bool)
    h_fg = np.bincount(rmap[gt & valid].reshape(-1), minlength=256)
    h_bg = np.bincount(rmap[~gt & valid].reshape(-1), minlength=256)
    # mismatch(t) = foreground below t + background at or above t
    below_fg = np.concatenate(([0], np.cumsum(h_fg)))[:256]
    below_bg = np.concatenate(([0], np.cumsum(h_bg)))[:256]
    mismatch = below_fg + (h_bg.sum() - below_bg)
    return int(np.argmin(mismatch))


def _mean_metrics(records: list[MetricsRecord]) -> MetricsRecord:
    vals = {f.name: sum(getattr(r, f.name) for r in records) / len(records) for f in fields(MetricsRecord)}
    return MetricsRecord(**vals)


@dataclass
class Report:
    video_counts: dict[tuple[str, str], ConfusionCounts]
    video_metrics: dict[tuple[str, str], MetricsRecord]
    category_metrics: dict[str, MetricsRecord]
    overall: MetricsRecord


def aggregate(scores: Iterable[tuple[str, str, ConfusionCounts]]) -> Report:
    """Aggregate per-frame counts into video, category, and overall scores.

    ``scores`` yields ``(category, video, counts)`` per frame.  Counts are
    pooled within a video; categories average their videos' metrics and
    the overall row averages the categories.
    """
    video_counts: dict[tuple[str, str], ConfusionCounts] = {}
    for category, video, counts in scores:
        key = (category, video)
        video_counts[key] = video_counts.get(key, ConfusionCounts()) + counts
    if not video_counts:
        raise ValueError("no scores to aggregate")
    video_metrics = {key: metrics(c) for key, c in video_counts.items()}
    by_category: dict[str, list[MetricsRecord]] = {}
    for (category, _video), rec in video_metrics.items():
        by_category.setdefault(category, []).append(rec)
    category_metrics = {cat: _mean_metrics(recs) for cat, recs in by_category.items()}
    overall = _mean_metrics(list(category_metrics.values()))
    return Report(video_counts, video_metrics, category_metrics, overall)


_METRIC_COLUMNS = ["recall", "specificity", "fpr", "fnr", "precision", "f1"]


def write_summary_csv(path, report: Report, frame_ranges: dict[tuple[str, str], str] | None = None) -> None:
    """Write video, category, and overall rows with metrics and raw counts."""
    frame_ranges = frame_ranges or {}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["scope", "category", "video", "frames"] + _METRIC_COLUMNS + ["tp", "fp", "tn", "fn"]
        )
        for (category, video), rec in sorted(report.video_metrics.items()):
            c = report.video_counts[(category, video)]
            writer.writerow(
                ["video", category, video, frame_ranges.get((category, video), "")]
                + [f"{getattr(rec, m):.6f}" for m in _METRIC_COLUMNS]
                + [c.tp, c.fp, c.tn, c.fn]
            )
        for category, rec in sorted(report.category_metrics.items()):
            writer.writerow(
                ["category", category, "", ""]
                + [f"{getattr(rec, m):.6f}" for m in _METRIC_COLUMNS]
                + ["", "", "", ""]
            )
        writer.writerow(
            ["overall", "", "", ""]
            + [f"{getattr(report.overall, m):.6f}" for m in _METRIC_COLUMNS]
            + ["", "", "", ""]
        )
