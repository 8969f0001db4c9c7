"""Confusion counts and the five segmentation scores (Jaccard, Dice,
accuracy, sensitivity, specificity)."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

METRIC_NAMES = ("jaccard", "dice", "accuracy", "sensitivity", "specificity")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)


@dataclass
class MetricsReport:
    jaccard: float
    dice: float
    accuracy: float
    sensitivity: float
    specificity: float
    loss_bce: float | None = None
    loss_jaccard: float | None = None
    n_images: int = 1
    aggregation: str = "per-image"
    degenerate: list[str] = field(default_factory=list)
    per_image: list[dict] | None = None

    def to_dict(self, include_per_image: bool = False) -> dict:
        d = asdict(self)
        if not include_per_image:
            d.pop("per_image")
        return d

    def to_json(self, include_per_image: bool = False) -> str:
        d = {"schema": "lssfnet.metrics/1", **self.to_dict(include_per_image)}
        return json.dumps(d, indent=2, sort_keys=True)


def _binary(mask, what: str) -> np.ndarray:
    m = np.asarray(mask)
    if m.dtype == bool:
        return m
    if not np.isin(m, (0, 1)).all():
        raise ValueError(f"{what} mask is not binary")
    return m.astype(bool)


def confusion(pred_mask, gt_mask) -> ConfusionCounts:
    pred = _binary(pred_mask, "predicted")
    gt = _binary(gt_mask, "ground-truth")
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return ConfusionCounts(tp, int(pred.size) - tp - fp - fn, fp, fn)


def _ratio(num: int, den: int, name: str, flags: list[str]) -> float:
    if den == 0:
        # empty-set convention: nothing to find and nothing wrongly found
        flags.append(name)
        return 1.0
    return num / den


def metrics(c: ConfusionCounts) -> MetricsReport:
    """Scores from one confusion table. A zero denominator yields 1.0 and the
    metric name is listed in ``degenerate``."""
    flags: list[str] = []
    return MetricsReport(
        jaccard=_ratio(c.tp, c.tp + c.fp + c.fn, "jaccard", flags),
        dice=_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, "dice", flags),
        accuracy=_ratio(c.tp + c.tn, c.total, "accuracy", flags),
        sensitivity=_ratio(c.tp, c.tp + c.fn, "sensitivity", flags),
        specificity=_ratio(c.tn, c.tn + c.fp, "specificity", flags),
        degenerate=flags,
    )


def aggregate(counts: list[ConfusionCounts], mode: str = "per-image",
              loss_bce: float | None = None, loss_jaccard: float | None = None) -> MetricsReport:
    """Corpus scores: ``per-image`` averages each image's metrics, ``micro``
    pools all counts into one table first."""
    if not counts:
        raise ValueError("no images to aggregate")
    reports = [metrics(c) for c in counts]
    if mode == "per-image":
        values = {k: float(np.mean([getattr(r, k) for r in reports])) for k in METRIC_NAMES}
        flags = sorted({f for r in reports for f in r.degenerate})
    elif mode == "micro":
        pooled = metrics(sum(counts[1:], counts[0]))
        values = {k: getattr(pooled, k) for k in METRIC_NAMES}
        flags = pooled.degenerate
    else:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    per_image = [{k: getattr(r, k) for k in METRIC_NAMES} for r in reports]
    return MetricsReport(**values, loss_bce=loss_bce, loss_jaccard=loss_jaccard, n_images=len(counts),
                         aggregation=mode, degenerate=flags, per_image=per_image)
