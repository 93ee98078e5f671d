"""IoU matching of detections against ground truth.

Matching runs once over all detections in global confidence order (the usual
AP protocol).  Every downstream metric then filters the resulting table by
confidence instead of re-matching.
"""

from __future__ import annotations

import bisect
import csv
import io
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .datamodel import BoundingBox, DataError, Dataset, Detection, InstanceKey

MATCH_DUMP_FIELDS = (
    "video_id", "frame_index", "class_id", "x1", "y1", "x2", "y2", "confidence",
    "verdict", "iou", "matched_instance_id",
)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True, slots=True)
class MatchEntry:
    """Verdict for one detection.  ``index`` is the detection's position in the input list."""

    index: int
    detection: Detection
    tp: bool
    iou: float
    matched_instance_id: int | None = None
    matched_frame_index: int | None = None

    @property
    def verdict(self) -> str:
        return "TP" if self.tp else "FP"

    @property
    def confidence(self) -> float:
        return self.detection.confidence

    @property
    def instance_key(self) -> InstanceKey | None:
        if self.matched_instance_id is None:
            return None
        return (self.detection.video_id, self.matched_instance_id)


@dataclass(frozen=True)
class MatchTable:
    """Threshold-independent TP/FP verdicts, sorted by confidence descending.

    Zero-confidence detections count as suppressed: they are left out of the
    table and never admitted at any threshold.
    """

    entries: tuple[MatchEntry, ...]
    gt_object_count: int
    class_object_counts: dict[int, int]
    iou_threshold: float = 0.5
    class_aware: bool = True
    suppressed: int = 0
    _fp_conf: list[float] = field(default_factory=list, init=False, repr=False, compare=False)
    _tp_conf: list[float] = field(default_factory=list, init=False, repr=False, compare=False)
    _all_conf: list[float] = field(default_factory=list, init=False, repr=False, compare=False)

    def __post_init__(self):
        # ascending copies for bisect-based counting
        self._fp_conf.extend(sorted(e.confidence for e in self.entries if not e.tp))
        self._tp_conf.extend(sorted(e.confidence for e in self.entries if e.tp))
        self._all_conf.extend(sorted({e.confidence for e in self.entries}))

    @property
    def fp_confidences(self) -> list[float]:
        """FP confidences, ascending."""
        return self._fp_conf

    @property
    def distinct_confidences(self) -> list[float]:
        """Distinct admitted-able confidences, ascending."""
        return self._all_conf

    @property
    def total_fp(self) -> int:
        return len(self._fp_conf)

    @property
    def total_tp(self) -> int:
        return len(self._tp_conf)

    def restrict(self, video_ids: Iterable[str], dataset: Dataset) -> "MatchTable":
        """Sub-table for a subset of videos; ``dataset`` must be the matching sub-dataset."""
        keep = set(video_ids)
        counts: dict[int, int] = defaultdict(int)
        for inst in dataset.instances:
            counts[inst.class_id] += len(inst)
        return MatchTable(
            entries=tuple(e for e in self.entries if e.detection.video_id in keep),
            gt_object_count=dataset.object_count,
            class_object_counts=dict(sorted(counts.items())),
            iou_threshold=self.iou_threshold,
            class_aware=self.class_aware,
        )


def fp_count_at(table: MatchTable, confidence_threshold: float) -> int:
    """Number of FP entries with confidence >= threshold."""
    fps = table.fp_confidences
    return len(fps) - bisect.bisect_left(fps, confidence_threshold)


def tp_count_at(table: MatchTable, confidence_threshold: float) -> int:
    tps = table._tp_conf
    return len(tps) - bisect.bisect_left(tps, confidence_threshold)


def _order_key(detections: Sequence[Detection]):
    return lambda i: (-detections[i].confidence, detections[i].video_id, detections[i].frame_index, i)


def _match_video(order, detections, gt_by_frame, iou_threshold, class_aware):
    """Greedy matching for one video's detections, given in global order."""
    taken: set[tuple[int, int]] = set()
    out = []
    for i in order:
        det = detections[i]
        best_iou, best_id, any_iou = -1.0, None, 0.0
        for inst_id, class_id, box in gt_by_frame.get(det.frame_index, ()):
            ov = iou(det.box, box)
            if ov > any_iou:
                any_iou = ov
            if class_aware and class_id != det.class_id:
                continue
            if (det.frame_index, inst_id) in taken:
                continue
            # candidates are pre-sorted by instance id, so ties keep the lowest id
            if ov >= iou_threshold and ov > best_iou:
                best_iou, best_id = ov, inst_id
        if best_id is None:
            out.append(MatchEntry(i, det, False, any_iou))
        else:
            taken.add((det.frame_index, best_id))
            out.append(MatchEntry(i, det, True, best_iou, best_id, det.frame_index))
    return out


def build_match_table(
    dataset: Dataset,
    detections: Sequence[Detection],
    iou_threshold: float = 0.5,
    class_aware: bool = True,
    workers: int = 1,
) -> MatchTable:
    """Match detections to ground truth in descending confidence order.

    Each detection claims the still-unmatched object in its frame (of the
    same class when ``class_aware``) with the highest IoU >= ``iou_threshold``.
    Anything else, duplicates included, is a false positive.  Confidence ties
    are broken by (video_id, frame_index, input position); IoU ties by the
    lowest instance id.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in (0, 1]")

    gt: dict[str, dict[int, list]] = defaultdict(lambda: defaultdict(list))
    counts: dict[int, int] = defaultdict(int)
    for inst in dataset.instances:
        counts[inst.class_id] += len(inst)
        frames = gt[inst.video_id]
        for frame, box in inst.occurrences:
            frames[frame].append((inst.instance_id, inst.class_id, box))
    for frames in gt.values():
        for cands in frames.values():
            cands.sort(key=lambda c: c[0])

    per_video: dict[str, list[int]] = defaultdict(list)
    suppressed = 0
    for i, det in enumerate(detections):
        n_frames = dataset.videos.get(det.video_id)
        if n_frames is None:
            raise DataError(f"detection {i} refers to unknown video {det.video_id!r}")
        if det.frame_index >= n_frames:
            raise DataError(
                f"detection {i} at frame {det.frame_index} outside video {det.video_id!r} "
                f"({n_frames} frames)"
            )
        if det.confidence <= 0.0:
            suppressed += 1
            continue
        per_video[det.video_id].append(i)

    key = _order_key(detections)
    jobs = [(sorted(idx, key=key), gt.get(vid, {})) for vid, idx in sorted(per_video.items())]

    def run(job):
        return _match_video(job[0], detections, job[1], iou_threshold, class_aware)

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]

    entries = [e for res in results for e in res]
    entries.sort(key=lambda e: key(e.index))
    return MatchTable(
        entries=tuple(entries),
        gt_object_count=dataset.object_count,
        class_object_counts=dict(sorted(counts.items())),
        iou_threshold=iou_threshold,
        class_aware=class_aware,
        suppressed=suppressed,
    )


def dumps_match_table(table: MatchTable) -> str:
    """Debug dump: detection fields plus verdict, iou and matched instance."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MATCH_DUMP_FIELDS)
    for e in table.entries:
        d, b = e.detection, e.detection.box
        writer.writerow([
            d.video_id, d.frame_index, d.class_id, repr(b.x1), repr(b.y1), repr(b.x2), repr(b.y2),
            repr(d.confidence), e.verdict, repr(e.iou),
            "" if e.matched_instance_id is None else e.matched_instance_id,
        ])
    return buf.getvalue()
