"""Detector-output manipulations and a synthetic detector with known delay law."""

from __future__ import annotations

import dataclasses
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datamodel import BoundingBox, Dataset, Detection, Instance
from .matching import MatchTable

PERTURBATION_KINDS = ("retardation_all", "retardation_low_conf", "tail_boost")
CONFIDENCE_MODELS = ("separated", "interleaved")


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str
    k_first: int = 5
    low_conf_cutoff: float | None = None
    tail_offset: int = 20
    boost_target: float = 0.99

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.k_first < 1:
            raise ValueError("k_first must be >= 1")
        if self.tail_offset < 1:
            raise ValueError("tail_offset must be >= 1")
        if not 0.0 <= self.boost_target <= 1.0:
            raise ValueError("boost_target must lie in [0, 1]")
        if self.kind == "retardation_low_conf" and self.low_conf_cutoff is None:
            raise ValueError("retardation_low_conf requires low_conf_cutoff")


def perturb(
    detections: Sequence[Detection],
    dataset: Dataset,
    table: MatchTable,
    spec: PerturbationSpec,
) -> list[Detection]:
    """Rewrite confidences only; order, boxes, frames and classes are kept.

    Retardation suppresses (confidence 0) the first ``k_first`` TPs of each
    instance in frame order, or only those below ``low_conf_cutoff``.  Tail
    boost raises TPs at least ``tail_offset`` frames after the instance's
    entry to ``boost_target``.
    """
    out = list(detections)
    tps: dict = defaultdict(list)
    for e in table.entries:
        if e.tp:
            tps[e.instance_key].append(e)
    entry = {inst.key: inst.entry_frame for inst in dataset.instances}

    for key in sorted(tps):
        hits = sorted(tps[key], key=lambda e: e.matched_frame_index)
        if spec.kind == "tail_boost":
            for e in hits:
                if e.matched_frame_index >= entry[key] + spec.tail_offset and e.confidence < spec.boost_target:
                    out[e.index] = dataclasses.replace(out[e.index], confidence=spec.boost_target)
            continue
        for e in hits[: spec.k_first]:
            if spec.kind == "retardation_low_conf" and e.confidence >= spec.low_conf_cutoff:
                continue
            out[e.index] = dataclasses.replace(out[e.index], confidence=0.0)
    return out


def affected_count(before: Sequence[Detection], after: Sequence[Detection]) -> int:
    return sum(a.confidence != b.confidence for a, b in zip(before, after))


@dataclass(frozen=True)
class SyntheticSpec:
    """Bernoulli detector: each instance frame yields a perfect TP with probability ``p``.

    Instances live ``frames_per_instance`` frames; within a video, instance
    ``j`` enters at frame ``j * entry_stride`` and occupies its own slot on
    the top row.  Spurious detections (Poisson, ``fp_rate`` per frame) sit
    on a disjoint lower row.
    """

    p: float
    fp_rate: float = 0.0
    num_instances: int = 1000
    frames_per_instance: int = 40
    instances_per_video: int = 8
    entry_stride: int = 5
    seed: int = 0
    confidence_model: str = "separated"
    box_size: float = 1.0
    class_id: int = 0
    video_prefix: str = "syn"

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ValueError("p must lie in (0, 1]")
        if self.fp_rate < 0:
            raise ValueError("fp_rate must be non-negative")
        if self.num_instances < 1 or self.frames_per_instance < 1:
            raise ValueError("num_instances and frames_per_instance must be positive")
        if self.instances_per_video < 1 or self.entry_stride < 0:
            raise ValueError("bad video layout")
        if self.box_size <= 0:
            raise ValueError("box_size must be positive")
        if self.confidence_model not in CONFIDENCE_MODELS:
            raise ValueError(f"unknown confidence model {self.confidence_model!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# slots per video row; keeps every box well inside a 4096-pixel frame
MAX_SLOTS = 1024


# separated: TP in (0.5, 1], FP in (0, 0.5]; interleaved: TP in (0.2, 1], FP in (0, 0.8]
_CONF_RANGES = {
    "separated": ((0.5, 1.0), (0.0, 0.5)),
    "interleaved": ((0.2, 1.0), (0.0, 0.8)),
}


def _draw(rng: np.random.Generator, n: int, lo: float, hi: float) -> np.ndarray:
    # uniform on the half-open interval (lo, hi]
    return hi - rng.uniform(0.0, hi - lo, n)


def _tp_confidences(rng: np.random.Generator, n: int, model: str) -> np.ndarray:
    return _draw(rng, n, *_CONF_RANGES[model][0])


def _fp_confidences(rng: np.random.Generator, n: int, model: str) -> np.ndarray:
    return _draw(rng, n, *_CONF_RANGES[model][1])


def synthesize(spec: SyntheticSpec) -> tuple[Dataset, list[Detection]]:
    """Generate a corpus and detector output; bitwise reproducible for a fixed seed."""
    ipv = spec.instances_per_video
    if ipv > MAX_SLOTS:
        raise ValueError(f"cannot place {ipv} disjoint instances per frame (max {MAX_SLOTS})")
    s = spec.box_size
    rng = np.random.default_rng(spec.seed)
    n_videos = -(-spec.num_instances // ipv)
    digits = len(str(n_videos - 1))

    instances: list[Instance] = []
    videos: dict[str, int] = {}
    detections: list[Detection] = []
    made = 0
    for v in range(n_videos):
        vid = f"{spec.video_prefix}{v:0{digits}d}"
        count = min(ipv, spec.num_instances - made)
        made += count
        n_frames = (count - 1) * spec.entry_stride + spec.frames_per_instance
        videos[vid] = n_frames

        per_frame: list[list[Detection]] = [[] for _ in range(n_frames)]
        for j in range(count):
            box = BoundingBox(2 * j * s, 0.0, 2 * j * s + s, s)
            start = j * spec.entry_stride
            frames = range(start, start + spec.frames_per_instance)
            instances.append(Instance(vid, j, spec.class_id, tuple((f, box) for f in frames)))
            hits = rng.random(spec.frames_per_instance) < spec.p
            confs = _tp_confidences(rng, spec.frames_per_instance, spec.confidence_model)
            for off in np.flatnonzero(hits):
                per_frame[start + off].append(Detection(vid, start + int(off), spec.class_id, box, float(confs[off])))

        if spec.fp_rate > 0:
            n_fp = rng.poisson(spec.fp_rate, n_frames)
            for f in range(n_frames):
                k = int(n_fp[f])
                if not k:
                    continue
                slots = rng.choice(2 * MAX_SLOTS, size=min(k, 2 * MAX_SLOTS), replace=False)
                confs = _fp_confidences(rng, len(slots), spec.confidence_model)
                for slot, c in zip(slots, confs):
                    fbox = BoundingBox(slot * s, 2 * s, slot * s + s, 3 * s)
                    per_frame[f].append(Detection(vid, f, spec.class_id, fbox, float(c)))
        for dets in per_frame:
            detections.extend(dets)

    return Dataset(videos=videos, instances=tuple(instances)), detections


def merge_corpora(*corpora: tuple[Dataset, list[Detection]]) -> tuple[Dataset, list[Detection]]:
    """Concatenate corpora with disjoint video ids (e.g. distinct ``video_prefix``)."""
    videos: dict[str, int] = {}
    instances: list[Instance] = []
    detections: list[Detection] = []
    for ds, dets in corpora:
        clash = videos.keys() & ds.videos.keys()
        if clash:
            raise ValueError(f"video ids overlap: {sorted(clash)[:3]}")
        videos.update(ds.videos)
        instances.extend(ds.instances)
        detections.extend(dets)
    return Dataset(videos=videos, instances=tuple(instances)), detections


def clipped_geometric_mean(p: float, window: int) -> float:
    """E[min(D, W)] for D ~ Geometric(p) on {0, 1, ...}: (1-p)(1-(1-p)^W)/p."""
    q = 1.0 - p
    return q * (1.0 - q**window) / p


def expected_off_window(p: float, window: int) -> float:
    """Probability that an ideal geometric delay reaches the window: (1-p)^W."""
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    if window < 1:
        raise ValueError("window must be >= 1")
    return (1.0 - p) ** window
