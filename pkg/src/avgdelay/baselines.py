"""Earlier delay metrics kept for comparison: a precision-controlled delay
(CaTDet style) and a windowed, sigmoid-scored NAB adaptation.

NAB adaptation
--------------
Each instance opens an anomaly window of ``anomaly_window`` frames at its
entry frame.  The first TP admitted at the operating threshold inside that
window earns

    score(d) = 2 / (1 + exp(steepness * d / window)) - offset

where ``d`` is the frame offset from the entry.  With the defaults
(steepness 5, offset 0) score(0) = 1 and score(window) = 0.013.  An
undetected window earns 0, TPs outside windows are ignored, and every FP at
or above the threshold subtracts ``fp_penalty_weight``.  The total is
divided by the number of instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .datamodel import Dataset
from .delay import DEFAULT_WINDOW, FirstDetectionIndex, clipped_mean_delay, instance_delays
from .matching import MatchTable, fp_count_at


@dataclass(frozen=True)
class CatdetDelay:
    target_precision: float
    attainable: bool
    threshold: float | None = None
    precision: float | None = None
    delay: float | None = None

    def to_dict(self) -> dict:
        return {
            "target_precision": self.target_precision,
            "attainable": self.attainable,
            "threshold": self.threshold,
            "precision": self.precision,
            "delay": self.delay,
        }


def precision_operating_threshold(table: MatchTable, target_precision: float) -> tuple[float, float] | None:
    """Scan distinct confidences from high to low and return (threshold, precision).

    The operating point is the lowest threshold of the first contiguous run
    of thresholds meeting the target: the scan starts counting at the first
    threshold reaching the target and stops as soon as precision falls
    below it.  Returns None when no threshold reaches the target.
    """
    tp = fp = 0
    chosen = None
    entries = table.entries  # confidence-descending
    i, n = 0, len(entries)
    while i < n:
        level = entries[i].confidence
        while i < n and entries[i].confidence == level:
            if entries[i].tp:
                tp += 1
            else:
                fp += 1
            i += 1
        prec = tp / (tp + fp)
        if prec >= target_precision:
            chosen = (level, prec)
        elif chosen is not None:
            break
    return chosen


def catdet_delay(
    dataset: Dataset,
    table: MatchTable,
    target_precision: float = 0.8,
    window: int = DEFAULT_WINDOW,
) -> CatdetDelay:
    """Clipped mean delay at the precision-controlled operating threshold."""
    if not 0.0 < target_precision < 1.0:
        raise ValueError("target precision must lie in (0, 1)")
    op = precision_operating_threshold(table, target_precision)
    if op is None:
        return CatdetDelay(target_precision, attainable=False)
    threshold, prec = op
    delays = instance_delays(dataset, table, threshold)
    return CatdetDelay(target_precision, True, threshold, prec, clipped_mean_delay(delays, window))


@dataclass(frozen=True)
class NabConfig:
    anomaly_window: int = DEFAULT_WINDOW
    steepness: float = 5.0
    offset: float = 0.0
    fp_penalty_weight: float = 0.001
    confidence_threshold: float = 0.5

    def __post_init__(self):
        if self.anomaly_window < 1:
            raise ValueError("anomaly window must be >= 1")
        if self.fp_penalty_weight < 0:
            raise ValueError("FP penalty weight must be non-negative")

    def to_dict(self) -> dict:
        return {
            "anomaly_window": self.anomaly_window,
            "steepness": self.steepness,
            "offset": self.offset,
            "fp_penalty_weight": self.fp_penalty_weight,
            "confidence_threshold": self.confidence_threshold,
        }


def nab_window_score(offset_frames: int, config: NabConfig) -> float:
    x = config.steepness * offset_frames / config.anomaly_window
    return 2.0 / (1.0 + math.exp(x)) - config.offset


def nab_score(dataset: Dataset, table: MatchTable, config: NabConfig | None = None) -> float:
    config = config or NabConfig()
    if not dataset.instances:
        raise ValueError("NAB score needs at least one instance")
    index = FirstDetectionIndex(table)
    gamma = config.confidence_threshold
    total = 0.0
    for inst in dataset.instances:
        first = index.first_frame(inst.key, gamma)
        if first is not None and first - inst.entry_frame < config.anomaly_window:
            total += nab_window_score(first - inst.entry_frame, config)
    total -= config.fp_penalty_weight * fp_count_at(table, gamma)
    return total / len(dataset.instances)
