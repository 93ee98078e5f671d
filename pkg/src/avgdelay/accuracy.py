"""VOC-style average precision over all frames, each frame an independent image."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matching import MatchTable


@dataclass(frozen=True)
class PrecisionRecallCurve:
    class_id: int
    recall: np.ndarray
    precision: np.ndarray

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))


def precision_recall_curve(table: MatchTable, class_id: int) -> PrecisionRecallCurve:
    """Sweep the class's detections in table (confidence) order."""
    npos = table.class_object_counts.get(class_id, 0)
    tp = np.array([e.tp for e in table.entries if e.detection.class_id == class_id], dtype=bool)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / npos if npos else np.zeros(len(tp))
    precision = ctp / np.maximum(ctp + cfp, 1)
    return PrecisionRecallCurve(class_id, recall, precision)


def _all_point(recall: np.ndarray, precision: np.ndarray) -> float:
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    step = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[step + 1] - mrec[step]) * mpre[step + 1]))


def _eleven_point(recall: np.ndarray, precision: np.ndarray) -> float:
    total = 0.0
    for t in np.linspace(0.0, 1.0, 11):
        above = precision[recall >= t]
        total += above.max() if above.size else 0.0
    # divide once so eleven perfect points give exactly 1
    return float(min(total / 11.0, 1.0))


def average_precision(table: MatchTable, class_id: int, interpolation: str = "all") -> float | None:
    """AP for one class, or None when the class has no ground-truth objects.

    ``interpolation`` is ``"all"`` (area under the precision envelope) or
    ``"11point"``.
    """
    if table.class_object_counts.get(class_id, 0) == 0:
        return None
    curve = precision_recall_curve(table, class_id)
    if curve.recall.size == 0:
        return 0.0
    if interpolation == "all":
        return _all_point(curve.recall, curve.precision)
    if interpolation == "11point":
        return _eleven_point(curve.recall, curve.precision)
    raise ValueError(f"unknown interpolation {interpolation!r}")


def per_class_ap(table: MatchTable, interpolation: str = "all") -> dict[int, float]:
    return {
        cid: average_precision(table, cid, interpolation)
        for cid, n in sorted(table.class_object_counts.items())
        if n > 0
    }


def mean_average_precision(table: MatchTable, interpolation: str = "all") -> float:
    """Unweighted mean of AP over classes present in the ground truth."""
    aps = per_class_ap(table, interpolation)
    if not aps:
        raise ValueError("no class has ground-truth objects")
    return float(sum(aps[c] for c in sorted(aps)) / len(aps))
