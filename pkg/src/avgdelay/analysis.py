"""Diagnostics over delays: histograms and tail statistics, per-class and
per-scale AD breakdowns, and k-fold consistency."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import stats

from .datamodel import Dataset, Instance, InstanceKey
from .delay import (
    DelayConfig,
    FirstDetectionIndex,
    average_delay,
    clipped_mean_delay,
    probability_from_delay,
    profile_at_thresholds,
    threshold_for_fp_ratio,
)
from .experiments import expected_off_window
from .matching import MatchTable

log = logging.getLogger(__name__)

OVERFLOW = None  # bin label for misses and delays beyond the last bin


def delay_histogram(
    delays: Mapping[InstanceKey, "int | None"], bin_width: int = 1, max_bin: int = 100
) -> list[tuple[int | None, int]]:
    """Non-empty ``(bin_start, count)`` pairs; misses and delays >= max_bin go to the overflow bin."""
    if bin_width < 1 or max_bin < 1:
        raise ValueError("bin_width and max_bin must be positive")
    counts: dict[int | None, int] = defaultdict(int)
    for d in delays.values():
        if d is None or d >= max_bin:
            counts[OVERFLOW] += 1
        else:
            counts[(d // bin_width) * bin_width] += 1
    out = sorted((b, c) for b, c in counts.items() if b is not None)
    if counts.get(OVERFLOW):
        out.append((OVERFLOW, counts[OVERFLOW]))
    return out


def geometric_pmf(p: float, k) -> np.ndarray:
    k = np.asarray(k)
    return p * (1.0 - p) ** k


def histogram_plot_data(
    delays: Mapping[InstanceKey, "int | None"], window: int, bin_width: int = 1, max_bin: int = 100
) -> dict:
    """Bin edges, counts and the geometric PMF fitted from the clipped mean."""
    hist = dict(delay_histogram(delays, bin_width, max_bin))
    edges = list(range(0, max_bin + 1, bin_width))
    if edges[-1] != max_bin:
        edges.append(max_bin)
    counts = [hist.get(b, 0) for b in edges[:-1]]
    p_hat = probability_from_delay(clipped_mean_delay(delays, window))
    n = len(delays)
    fitted = []
    for lo, hi in zip(edges, edges[1:]):
        fitted.append(float(n * geometric_pmf(p_hat, np.arange(lo, hi)).sum()))
    return {
        "bin_edges": edges,
        "counts": counts,
        "overflow": hist.get(OVERFLOW, 0),
        "p_hat": p_hat,
        "fitted_counts": fitted,
        "instances": n,
    }


@dataclass(frozen=True)
class TailReport:
    mean: float | None
    clipped_mean: float
    off_window_pct: float
    expected_off_window_pct: float
    excluded_misses: int
    window: int

    @property
    def heavy_tail(self) -> bool:
        return self.off_window_pct > self.expected_off_window_pct

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "mean": self.mean,
            "clipped_mean": self.clipped_mean,
            "off_window_pct": self.off_window_pct,
            "expected_off_window_pct": self.expected_off_window_pct,
            "excluded_misses": self.excluded_misses,
            "heavy_tail": self.heavy_tail,
        }


def tail_report(delays: Mapping[InstanceKey, "int | None"], window: int) -> TailReport:
    """Heavy-tail statistics.  Percentages are fractions in [0, 1].

    A delay counts as off-window when it is ``>= window`` or a miss, which is
    the event whose ideal probability is (1 - p)^W.
    """
    if not delays:
        raise ValueError("tail report needs at least one instance")
    finite = [d for _, d in sorted(delays.items()) if d is not None]
    misses = len(delays) - len(finite)
    mean = sum(finite) / len(finite) if finite else None
    clipped = clipped_mean_delay(delays, window)
    off = (misses + sum(d >= window for d in finite)) / len(delays)
    expected = expected_off_window(probability_from_delay(clipped), window)
    return TailReport(mean, clipped, off, expected, misses, window)


def geometric_fit_test(delays: Mapping[InstanceKey, "int | None"], p: float, min_expected: float = 5.0):
    """Chi-square goodness of fit of delays against Geometric(p) on {0, 1, ...}.

    Bins run 0, 1, 2, ... while the expected count stays >= ``min_expected``;
    everything beyond (misses included) is pooled into one tail bin.
    Returns ``scipy.stats`` ``(statistic, pvalue)``.
    """
    n = len(delays)
    last = 0
    while n * geometric_pmf(p, last + 1) >= min_expected and n * (1 - p) ** (last + 2) >= min_expected:
        last += 1
    expected = [n * float(geometric_pmf(p, k)) for k in range(last + 1)]
    expected.append(n - sum(expected))
    observed = [0] * (last + 2)
    for d in delays.values():
        observed[last + 1 if d is None or d > last else d] += 1
    return stats.chisquare(observed, expected)


def _global_thresholds(table: MatchTable, config: DelayConfig) -> list[float]:
    return [threshold_for_fp_ratio(table, r) for r in config.fp_ratios]


def _grouped_ad(dataset, table, config, groups: Mapping, min_instances: int = 1) -> dict:
    thresholds = _global_thresholds(table, config)
    index = FirstDetectionIndex(table)
    out = {}
    for name, insts in groups.items():
        if len(insts) < min_instances:
            log.info("omitting group %s: %d instances < %d", name, len(insts), min_instances)
            continue
        out[name] = profile_at_thresholds(dataset, table, config, thresholds, insts, index).average_delay
    return out


def ad_by_class(
    dataset: Dataset, table: MatchTable, config: DelayConfig | None = None, min_instances: int = 40
) -> dict[int, float]:
    """AD per class, at the operating thresholds chosen on the whole corpus."""
    config = config or DelayConfig()
    groups: dict[int, list[Instance]] = defaultdict(list)
    for inst in dataset.instances:
        groups[inst.class_id].append(inst)
    return _grouped_ad(dataset, table, config, dict(sorted(groups.items())), min_instances)


@dataclass(frozen=True)
class ScaleBuckets:
    small_below: float = 40.0
    large_from: float = 100.0
    frames: int = 30

    def __post_init__(self):
        if not self.small_below < self.large_from:
            raise ValueError("scale thresholds must be strictly increasing")

    def bucket(self, size: float) -> str:
        if size < self.small_below:
            return "small"
        if size < self.large_from:
            return "median"
        return "large"


SCALE_ORDER = ("small", "median", "large")


def instance_scale(inst: Instance, frames: int = 30) -> float:
    """Mean shorter box side over the first ``frames`` occurrences (whole lifetime if shorter)."""
    head = inst.occurrences[:frames]
    return sum(box.shorter_side for _, box in head) / len(head)


def scale_assignment(dataset: Dataset, buckets: ScaleBuckets | None = None) -> dict[InstanceKey, str]:
    buckets = buckets or ScaleBuckets()
    return {inst.key: buckets.bucket(instance_scale(inst, buckets.frames)) for inst in dataset.instances}


def ad_by_scale(
    dataset: Dataset, table: MatchTable, config: DelayConfig | None = None, buckets: ScaleBuckets | None = None
) -> dict[str, float]:
    config = config or DelayConfig()
    assignment = scale_assignment(dataset, buckets)
    groups: dict[str, list[Instance]] = {name: [] for name in SCALE_ORDER}
    for inst in dataset.instances:
        groups[assignment[inst.key]].append(inst)
    return _grouped_ad(dataset, table, config, {k: v for k, v in groups.items() if v})


def kfold_partition(video_ids, k: int, seed: int = 0) -> list[list[str]]:
    vids = sorted(video_ids)
    if not 1 <= k <= len(vids):
        raise ValueError(f"k={k} must lie in [1, {len(vids)}] (video count)")
    perm = np.random.default_rng(seed).permutation(len(vids))
    return [sorted(vids[i] for i in perm[f::k]) for f in range(k)]


def kfold_ad(
    dataset: Dataset, table: MatchTable, config: DelayConfig | None = None, k: int = 3, seed: int = 0
) -> list[float]:
    """AD per fold of a seeded video partition; thresholds are chosen within each fold."""
    config = config or DelayConfig()
    out = []
    for fold in kfold_partition(dataset.videos, k, seed):
        sub = dataset.select_videos(fold)
        if not sub.instances:
            out.append(math.nan)
            continue
        out.append(average_delay(sub, table.restrict(fold, sub), config).average_delay)
    return out
