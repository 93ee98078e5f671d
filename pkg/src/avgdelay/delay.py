"""Average Delay: per-instance delays at FP-ratio operating points,
window clipping, and the harmonic-style combination across ratios."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .datamodel import Dataset, InstanceKey
from .matching import MatchTable, fp_count_at

DEFAULT_WINDOW = 30
DEFAULT_FP_RATIOS = (0.1, 0.2, 0.4, 0.8, 1.6, 3.2)

# None marks an instance never detected at the threshold
Delays = dict[InstanceKey, "int | None"]


@dataclass(frozen=True)
class DelayConfig:
    window: int = DEFAULT_WINDOW
    fp_ratios: tuple[float, ...] = DEFAULT_FP_RATIOS
    iou_threshold: float = 0.5
    class_aware: bool = True

    def __post_init__(self):
        object.__setattr__(self, "fp_ratios", tuple(float(r) for r in self.fp_ratios))
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not self.fp_ratios:
            raise ValueError("at least one FP ratio is required")
        if any(r <= 0 for r in self.fp_ratios):
            raise ValueError("FP ratios must be positive")
        if any(b <= a for a, b in zip(self.fp_ratios, self.fp_ratios[1:])):
            raise ValueError("FP ratios must be strictly increasing")

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "fp_ratios": list(self.fp_ratios),
            "iou_threshold": self.iou_threshold,
            "class_aware": self.class_aware,
        }


@dataclass(frozen=True)
class RatioRecord:
    fp_ratio: float
    threshold: float
    achieved_fp_ratio: float
    clipped_mean_delay: float
    probability: float
    # even admitting every detection stays under the requested budget
    unreachable: bool = False


@dataclass(frozen=True)
class DelayProfile:
    config: DelayConfig
    records: tuple[RatioRecord, ...]
    mean_probability: float
    average_delay: float
    instance_count: int
    delays: tuple[Delays, ...] = field(default=(), repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "instances": self.instance_count,
            "ratios": [
                {
                    "fp_ratio": r.fp_ratio,
                    "threshold": r.threshold if math.isfinite(r.threshold) else None,
                    "achieved_fp_ratio": r.achieved_fp_ratio,
                    "clipped_mean_delay": r.clipped_mean_delay,
                    "p": r.probability,
                    "unreachable": r.unreachable,
                }
                for r in self.records
            ],
            "mean_p": self.mean_probability,
            "average_delay": self.average_delay,
        }

    def format_table(self) -> str:
        lines = [
            f"{'FP ratio':>9} {'threshold':>10} {'achieved':>9} {'D*':>8} {'p':>8}",
        ]
        for r in self.records:
            flag = "  achieved < requested" if r.unreachable else ""
            lines.append(
                f"{r.fp_ratio:>9.3g} {r.threshold:>10.4f} {r.achieved_fp_ratio:>9.4f} "
                f"{r.clipped_mean_delay:>8.3f} {r.probability:>8.4f}{flag}"
            )
        lines.append(f"AD = {self.average_delay:.3f} frames (W={self.config.window}, "
                     f"{self.instance_count} instances)")
        return "\n".join(lines)


def threshold_for_fp_ratio(table: MatchTable, r: float) -> float:
    """Most permissive confidence threshold whose FP count stays within ``r`` x GT objects.

    Candidates are 0, the detection confidences and +inf.  Admission is
    ``confidence >= threshold``.
    """
    if r <= 0:
        raise ValueError("FP ratio must be positive")
    n_gt = table.gt_object_count
    fps = table.fp_confidences  # ascending
    n_fp = len(fps)
    if n_gt == 0:
        return 0.0 if n_fp == 0 else math.inf
    if n_fp / n_gt <= r:
        return 0.0
    budget = min(n_fp, int(math.floor(r * n_gt)))
    while budget + 1 <= n_fp and (budget + 1) / n_gt <= r:
        budget += 1
    while budget > 0 and budget / n_gt > r:
        budget -= 1
    # the (budget+1)-th most confident FP must be excluded
    cutoff = fps[n_fp - 1 - budget]
    confs = table.distinct_confidences
    pos = bisect.bisect_right(confs, cutoff)
    return confs[pos] if pos < len(confs) else math.inf


class FirstDetectionIndex:
    """Per-instance lookup of the earliest TP frame admitted at any threshold.

    For each instance only the TP entries whose confidence beats every
    earlier TP (in frame order) can be first at some threshold; their
    confidences are increasing, so the lookup is a bisect.
    """

    def __init__(self, table: MatchTable):
        per_inst: dict[InstanceKey, list[tuple[int, float]]] = {}
        for e in table.entries:
            if e.tp:
                per_inst.setdefault(e.instance_key, []).append((e.matched_frame_index, e.confidence))
        self._records: dict[InstanceKey, tuple[list[float], list[int]]] = {}
        for key, hits in per_inst.items():
            hits.sort()
            confs, frames, best = [], [], -1.0
            for frame, conf in hits:
                if conf > best:
                    best = conf
                    confs.append(conf)
                    frames.append(frame)
            self._records[key] = (confs, frames)

    def first_frame(self, key: InstanceKey, threshold: float) -> int | None:
        rec = self._records.get(key)
        if rec is None:
            return None
        confs, frames = rec
        pos = bisect.bisect_left(confs, threshold)
        return frames[pos] if pos < len(confs) else None


def instance_delays(
    dataset: Dataset,
    table: MatchTable,
    threshold: float,
    index: FirstDetectionIndex | None = None,
    instances: Iterable | None = None,
) -> Delays:
    """Frames from each instance's entry to its first TP with confidence >= threshold."""
    index = index or FirstDetectionIndex(table)
    out: Delays = {}
    for inst in dataset.instances if instances is None else instances:
        first = index.first_frame(inst.key, threshold)
        out[inst.key] = None if first is None else first - inst.entry_frame
    return out


def clipped_mean_delay(delays: Mapping[InstanceKey, "int | None"], window: int) -> float:
    """Mean of min(delay, window) over all instances; misses count as ``window``."""
    if not delays:
        raise ValueError("clipped mean delay needs at least one instance")
    if window < 1:
        raise ValueError("window must be >= 1")
    # integer sum in key order: exact and independent of evaluation order
    total = sum(window if d is None else min(d, window) for _, d in sorted(delays.items()))
    return total / len(delays)


def probability_from_delay(mean_delay: float) -> float:
    if mean_delay < 0:
        raise ValueError("mean delay must be non-negative")
    return 1.0 / (mean_delay + 1.0)


def combine_delays(mean_delays: Sequence[float]) -> tuple[float, float]:
    """Average the per-ratio probabilities and map back to a delay: (p_bar, AD)."""
    probs = [probability_from_delay(d) for d in mean_delays]
    if len(set(probs)) == 1:
        p_bar = probs[0]
    else:
        p_bar = math.fsum(probs) / len(probs)
    return p_bar, 1.0 / p_bar - 1.0


def profile_at_thresholds(
    dataset: Dataset,
    table: MatchTable,
    config: DelayConfig,
    thresholds: Sequence[float],
    instances: Sequence | None = None,
    index: FirstDetectionIndex | None = None,
) -> DelayProfile:
    """Delay profile for a subset of instances at fixed per-ratio thresholds."""
    insts = list(dataset.instances if instances is None else instances)
    if not insts:
        raise ValueError("average delay needs at least one instance")
    index = index or FirstDetectionIndex(table)
    n_gt = table.gt_object_count
    total_fp_ratio = table.total_fp / n_gt if n_gt else 0.0
    records, all_delays = [], []
    for r, gamma in zip(config.fp_ratios, thresholds):
        delays = instance_delays(dataset, table, gamma, index=index, instances=insts)
        d_star = clipped_mean_delay(delays, config.window)
        achieved = fp_count_at(table, gamma) / n_gt if n_gt else 0.0
        records.append(
            RatioRecord(
                fp_ratio=r,
                threshold=gamma,
                achieved_fp_ratio=achieved,
                clipped_mean_delay=d_star,
                probability=probability_from_delay(d_star),
                unreachable=total_fp_ratio < r,
            )
        )
        all_delays.append(delays)
    p_bar, ad = combine_delays([rec.clipped_mean_delay for rec in records])
    return DelayProfile(
        config=config,
        records=tuple(records),
        mean_probability=p_bar,
        average_delay=ad,
        instance_count=len(insts),
        delays=tuple(all_delays),
    )


def average_delay(dataset: Dataset, table: MatchTable, config: DelayConfig | None = None) -> DelayProfile:
    """Full AD evaluation with FP budgets pooled over the whole corpus."""
    config = config or DelayConfig()
    thresholds = [threshold_for_fp_ratio(table, r) for r in config.fp_ratios]
    return profile_at_thresholds(dataset, table, config, thresholds)


def average_delay_per_video(dataset: Dataset, table: MatchTable, config: DelayConfig | None = None) -> DelayProfile:
    """Variant choosing FP thresholds separately inside each video.

    Per-video D* values are pooled instance-weighted before combining.
    """
    config = config or DelayConfig()
    index = FirstDetectionIndex(table)
    merged: list[dict] = [dict() for _ in config.fp_ratios]
    achieved_fp = [0] * len(config.fp_ratios)
    for vid in dataset.videos:
        sub = dataset.select_videos([vid])
        if not sub.instances:
            continue
        subtable = table.restrict([vid], sub)
        for k, r in enumerate(config.fp_ratios):
            gamma = threshold_for_fp_ratio(subtable, r)
            achieved_fp[k] += fp_count_at(subtable, gamma)
            merged[k].update(instance_delays(sub, subtable, gamma, index=index))
    if not merged[0]:
        raise ValueError("average delay needs at least one instance")
    n_gt = table.gt_object_count
    records = []
    for k, r in enumerate(config.fp_ratios):
        d_star = clipped_mean_delay(merged[k], config.window)
        records.append(RatioRecord(r, math.nan, achieved_fp[k] / n_gt, d_star, probability_from_delay(d_star),
                                   unreachable=table.total_fp / n_gt < r))
    p_bar, ad = combine_delays([rec.clipped_mean_delay for rec in records])
    return DelayProfile(config, tuple(records), p_bar, ad, len(merged[0]), tuple(merged))
