"""Slow, obviously-correct reference implementations used by the tests."""

from __future__ import annotations

import math


def brute_threshold(table, r):
    """Smallest candidate threshold whose FP count is within r x GT objects."""
    candidates = sorted({0.0, math.inf, *(e.confidence for e in table.entries)})
    for gamma in candidates:
        fp = sum(1 for e in table.entries if not e.tp and e.confidence >= gamma)
        if fp / table.gt_object_count <= r:
            return gamma
    return math.inf


def brute_delays(dataset, table, gamma):
    out = {}
    for inst in dataset.instances:
        frames = [
            e.matched_frame_index for e in table.entries
            if e.tp and e.instance_key == inst.key and e.confidence >= gamma
        ]
        out[inst.key] = min(frames) - inst.entry_frame if frames else None
    return out


def brute_ad(dataset, table, window, ratios):
    probs = []
    for r in ratios:
        delays = brute_delays(dataset, table, brute_threshold(table, r))
        d = sum(window if v is None else min(v, window) for v in delays.values()) / len(delays)
        probs.append(1.0 / (d + 1.0))
    return 1.0 / (sum(probs) / len(probs)) - 1.0


def brute_ap(table, class_id):
    """VOC all-point AP written as a sum over every recall step."""
    entries = [e for e in table.entries if e.detection.class_id == class_id]
    n_gt = table.class_object_counts.get(class_id, 0)
    tp = fp = 0
    prec, rec = [], []
    for e in entries:
        tp += e.tp
        fp += not e.tp
        prec.append(tp / (tp + fp))
        rec.append(tp / n_gt)
    ap, prev_r = 0.0, 0.0
    for i, r in enumerate(rec):
        if r > prev_r:
            ap += (r - prev_r) * max(prec[i:])
            prev_r = r
    return ap
