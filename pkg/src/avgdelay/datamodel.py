"""Domain types, file I/O and VIDT-style subset construction.

Ground truth and detections are exchanged as CSV or JSONL.  Both formats
may carry a small metadata preamble:

CSV
    ``#``-prefixed lines before the header, one ``key=value`` each::

        #frame_base=1
        #video=snippet_0007:300
        #class=0:airplane

JSONL
    an optional first record ``{"meta": {"frame_base": 1,
    "videos": {"snippet_0007": 300}, "class_names": {"0": "airplane"}}}``.

``frame_base`` declares whether the file counts frames from 0 or 1; frames
are always 0-based in memory.  ``video`` entries declare frame counts (and
videos without any annotated object); otherwise the count is the last
annotated frame plus one.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

GT_FIELDS = ("video_id", "frame_index", "track_id", "class_id", "x1", "y1", "x2", "y2")
DET_FIELDS = ("video_id", "frame_index", "class_id", "x1", "y1", "x2", "y2", "confidence")
FORMATS = ("csv", "jsonl")


class DataError(ValueError):
    """Input data violates the file format or a domain invariant."""


class MalformedRowError(DataError):
    def __init__(self, path, lineno: int, field_name: str | None, reason: str):
        self.path = str(path)
        self.lineno = lineno
        self.field = field_name
        where = f"{self.path}:{lineno}"
        if field_name:
            where += f" field '{field_name}'"
        super().__init__(f"{where}: {reason}")


@dataclass(frozen=True, slots=True)
class BoundingBox:
    """Axis-aligned pixel rectangle, origin at the top-left corner."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise DataError(f"non-finite box coordinate in {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise DataError(f"degenerate box {coords}: need x1 < x2 and y1 < y2")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def shorter_side(self) -> float:
        return min(self.width, self.height)


@dataclass(frozen=True, slots=True)
class GroundTruthObject:
    """One annotated occurrence of an instance in one frame."""

    video_id: str
    frame_index: int
    class_id: int
    track_id: int
    box: BoundingBox


@dataclass(frozen=True, slots=True)
class Detection:
    video_id: str
    frame_index: int
    class_id: int
    box: BoundingBox
    confidence: float

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise DataError(f"confidence {self.confidence!r} outside [0, 1]")
        if self.frame_index < 0:
            raise DataError(f"negative frame index {self.frame_index}")


@dataclass(frozen=True)
class Instance:
    """A tracklet: occurrences of one physical object sharing an identity.

    ``track_id`` is the identity found in the annotation file and
    ``instance_id`` the identity after tracklet splitting; the two are equal
    until :func:`split_tracklets` cuts a track at a long gap.
    """

    video_id: str
    instance_id: int
    class_id: int
    occurrences: tuple[tuple[int, BoundingBox], ...]
    track_id: int = -1

    def __post_init__(self):
        if not self.occurrences:
            raise DataError(f"instance {self.key} has no occurrences")
        frames = [f for f, _ in self.occurrences]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise DataError(f"instance {self.key} occurrences not strictly increasing by frame")
        if self.track_id < 0:
            object.__setattr__(self, "track_id", self.instance_id)

    @property
    def key(self) -> tuple[str, int]:
        return (self.video_id, self.instance_id)

    @property
    def entry_frame(self) -> int:
        return self.occurrences[0][0]

    @property
    def last_frame(self) -> int:
        return self.occurrences[-1][0]

    @property
    def frames(self) -> list[int]:
        return [f for f, _ in self.occurrences]

    def __len__(self) -> int:
        return len(self.occurrences)


InstanceKey = tuple[str, int]


@dataclass(frozen=True)
class Dataset:
    """Annotated videos.  Immutable once built; instances kept in (video, id) order."""

    videos: Mapping[str, int]
    instances: tuple[Instance, ...]
    class_names: Mapping[int, str] | None = None
    _objects: tuple[GroundTruthObject, ...] | None = field(
        default=None, init=False, repr=False, compare=False
    )

    def __post_init__(self):
        object.__setattr__(self, "videos", dict(sorted(self.videos.items())))
        ordered = tuple(sorted(self.instances, key=lambda inst: inst.key))
        object.__setattr__(self, "instances", ordered)
        if self.class_names is not None:
            object.__setattr__(self, "class_names", dict(sorted(self.class_names.items())))
        self._validate()

    def _validate(self) -> None:
        seen_keys: set[InstanceKey] = set()
        seen_objects: set[tuple[str, int, int]] = set()
        track_class: dict[tuple[str, int], int] = {}
        for inst in self.instances:
            if inst.video_id not in self.videos:
                raise DataError(f"instance {inst.key} refers to undeclared video")
            if inst.key in seen_keys:
                raise DataError(f"duplicate instance id {inst.key}")
            seen_keys.add(inst.key)
            if inst.last_frame >= self.videos[inst.video_id]:
                raise DataError(
                    f"instance {inst.key} annotated at frame {inst.last_frame} but video "
                    f"{inst.video_id!r} has {self.videos[inst.video_id]} frames"
                )
            prev = track_class.setdefault((inst.video_id, inst.track_id), inst.class_id)
            if prev != inst.class_id:
                raise DataError(
                    f"track {inst.track_id} of video {inst.video_id!r} changes class "
                    f"{prev} -> {inst.class_id}"
                )
            for frame, _ in inst.occurrences:
                okey = (inst.video_id, frame, inst.track_id)
                if okey in seen_objects:
                    raise DataError(f"duplicate object (video, frame, track) = {okey}")
                seen_objects.add(okey)

    @property
    def objects(self) -> tuple[GroundTruthObject, ...]:
        if self._objects is None:
            objs = [
                GroundTruthObject(inst.video_id, frame, inst.class_id, inst.track_id, box)
                for inst in self.instances
                for frame, box in inst.occurrences
            ]
            objs.sort(key=lambda o: (o.video_id, o.frame_index, o.track_id))
            object.__setattr__(self, "_objects", tuple(objs))
        return self._objects

    @property
    def object_count(self) -> int:
        return sum(len(inst) for inst in self.instances)

    def instance_map(self) -> dict[InstanceKey, Instance]:
        return {inst.key: inst for inst in self.instances}

    def select_videos(self, video_ids: Iterable[str]) -> "Dataset":
        keep = set(video_ids)
        return Dataset(
            videos={v: n for v, n in self.videos.items() if v in keep},
            instances=tuple(i for i in self.instances if i.video_id in keep),
            class_names=self.class_names,
        )

    def summary(self) -> dict[str, int]:
        """Snippet, frame, instance and object counts."""
        return {
            "snippets": len(self.videos),
            "frames": sum(self.videos.values()),
            "instances": len(self.instances),
            "objects": self.object_count,
        }


def dataset_from_objects(
    objects: Iterable[GroundTruthObject],
    videos: Mapping[str, int] | None = None,
    class_names: Mapping[int, str] | None = None,
) -> Dataset:
    """Group per-frame objects into instances keyed by track identity."""
    tracks: dict[tuple[str, int], list[GroundTruthObject]] = defaultdict(list)
    for obj in objects:
        tracks[(obj.video_id, obj.track_id)].append(obj)

    frame_counts = dict(videos or {})
    instances = []
    for (video_id, track_id), objs in tracks.items():
        objs.sort(key=lambda o: o.frame_index)
        classes = {o.class_id for o in objs}
        if len(classes) > 1:
            raise DataError(
                f"track {track_id} of video {video_id!r} changes class: {sorted(classes)}"
            )
        for a, b in zip(objs, objs[1:]):
            if a.frame_index == b.frame_index:
                raise DataError(
                    f"duplicate object (video, frame, track) = ({video_id!r}, {a.frame_index}, {track_id})"
                )
        instances.append(
            Instance(
                video_id=video_id,
                instance_id=track_id,
                class_id=objs[0].class_id,
                occurrences=tuple((o.frame_index, o.box) for o in objs),
                track_id=track_id,
            )
        )
        needed = objs[-1].frame_index + 1
        if video_id in (videos or {}):
            if videos[video_id] < needed:
                raise DataError(
                    f"video {video_id!r} declared with {videos[video_id]} frames but "
                    f"annotated up to frame {needed - 1}"
                )
        else:
            frame_counts[video_id] = max(frame_counts.get(video_id, 0), needed)
    return Dataset(videos=frame_counts, instances=tuple(instances), class_names=class_names)


# ---------------------------------------------------------------- parsing

@dataclass
class _Meta:
    frame_base: int = 0
    videos: dict[str, int] = field(default_factory=dict)
    class_names: dict[int, str] = field(default_factory=dict)


def _int_field(raw, path, lineno, name) -> int:
    if isinstance(raw, bool):
        raise MalformedRowError(path, lineno, name, f"expected integer, got {raw!r}")
    if isinstance(raw, int):
        return raw
    if isinstance(raw, str):
        try:
            return int(raw.strip())
        except ValueError:
            pass
    raise MalformedRowError(path, lineno, name, f"expected integer, got {raw!r}")


def _float_field(raw, path, lineno, name) -> float:
    if isinstance(raw, bool):
        raise MalformedRowError(path, lineno, name, f"expected number, got {raw!r}")
    try:
        value = float(raw.strip() if isinstance(raw, str) else raw)
    except (TypeError, ValueError):
        raise MalformedRowError(path, lineno, name, f"expected number, got {raw!r}") from None
    if not math.isfinite(value):
        raise MalformedRowError(path, lineno, name, f"non-finite value {raw!r}")
    return value


def _str_field(raw, path, lineno, name) -> str:
    if not isinstance(raw, str) or not raw:
        raise MalformedRowError(path, lineno, name, f"expected non-empty string, got {raw!r}")
    return raw


def _apply_meta_line(meta: _Meta, text: str, path, lineno: int) -> None:
    key, sep, value = text.partition("=")
    key = key.strip()
    if not sep:
        raise MalformedRowError(path, lineno, None, f"metadata line without '=': {text!r}")
    if key == "frame_base":
        base = _int_field(value, path, lineno, "frame_base")
        if base not in (0, 1):
            raise MalformedRowError(path, lineno, "frame_base", "must be 0 or 1")
        meta.frame_base = base
    elif key == "video":
        vid, sep, count = value.strip().rpartition(":")
        if not sep or not vid:
            raise MalformedRowError(path, lineno, "video", "expected <video_id>:<frame_count>")
        meta.videos[vid] = _int_field(count, path, lineno, "video")
    elif key == "class":
        cid, sep, name = value.strip().partition(":")
        if not sep:
            raise MalformedRowError(path, lineno, "class", "expected <class_id>:<name>")
        meta.class_names[_int_field(cid, path, lineno, "class")] = name
    else:
        raise MalformedRowError(path, lineno, None, f"unknown metadata key {key!r}")


def _meta_from_json(obj, path, lineno) -> _Meta:
    if not isinstance(obj, dict):
        raise MalformedRowError(path, lineno, "meta", "expected an object")
    meta = _Meta()
    if "frame_base" in obj:
        meta.frame_base = _int_field(obj["frame_base"], path, lineno, "frame_base")
        if meta.frame_base not in (0, 1):
            raise MalformedRowError(path, lineno, "frame_base", "must be 0 or 1")
    for vid, count in (obj.get("videos") or {}).items():
        meta.videos[vid] = _int_field(count, path, lineno, "videos")
    for cid, name in (obj.get("class_names") or {}).items():
        meta.class_names[_int_field(cid, path, lineno, "class_names")] = str(name)
    return meta


def _iter_records(path: Path, fmt: str, fields: Sequence[str]) -> tuple[_Meta, Iterator[tuple[int, dict]]]:
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    meta = _Meta()

    if fmt == "csv":
        start = 0
        while start < len(lines) and (lines[start].startswith("#") or not lines[start].strip()):
            if lines[start].strip():
                _apply_meta_line(meta, lines[start][1:], path, start + 1)
            start += 1
        if start == len(lines):
            return meta, iter(())
        reader = csv.reader(lines[start:])
        header = [h.strip() for h in next(reader)]
        if tuple(header) != tuple(fields):
            raise MalformedRowError(
                path, start + 1, None, f"header must be {','.join(fields)}, got {','.join(header)}"
            )

        def rows():
            for offset, row in enumerate(reader, start=start + 2):
                if not row or (len(row) == 1 and not row[0].strip()):
                    continue
                if len(row) != len(fields):
                    raise MalformedRowError(
                        path, offset, None, f"expected {len(fields)} columns, got {len(row)}"
                    )
                yield offset, dict(zip(fields, row))

        return meta, rows()

    records: list[tuple[int, dict]] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRowError(path, lineno, None, f"invalid JSON: {exc.msg}") from None
        if not isinstance(obj, dict):
            raise MalformedRowError(path, lineno, None, "expected a JSON object")
        if "meta" in obj:
            if records:
                raise MalformedRowError(path, lineno, "meta", "meta record must come first")
            meta = _meta_from_json(obj["meta"], path, lineno)
            continue
        missing = [f for f in fields if f not in obj]
        if missing:
            raise MalformedRowError(path, lineno, missing[0], "missing field")
        records.append((lineno, obj))
    return meta, iter(records)


def _parse_box(rec, path, lineno) -> BoundingBox:
    x1, y1, x2, y2 = (_float_field(rec[k], path, lineno, k) for k in ("x1", "y1", "x2", "y2"))
    if not x1 < x2:
        raise MalformedRowError(path, lineno, "x2", f"x2={x2!r} must exceed x1={x1!r}")
    if not y1 < y2:
        raise MalformedRowError(path, lineno, "y2", f"y2={y2!r} must exceed y1={y1!r}")
    return BoundingBox(x1, y1, x2, y2)


def _frame(rec, meta, path, lineno) -> int:
    frame = _int_field(rec["frame_index"], path, lineno, "frame_index") - meta.frame_base
    if frame < 0:
        raise MalformedRowError(path, lineno, "frame_index", "frame index below the declared base")
    return frame


def _nonneg(value: int, path, lineno, name) -> int:
    if value < 0:
        raise MalformedRowError(path, lineno, name, "must be non-negative")
    return value


def parse_ground_truth(path: str | os.PathLike, format: str = "csv") -> Dataset:
    """Read a ground-truth file into a validated :class:`Dataset`.

    Malformed rows raise :class:`MalformedRowError` carrying the line number
    and field; duplicate (video, frame, track) triples and class changes
    within a track raise :class:`DataError`.
    """
    meta, records = _iter_records(Path(path), format, GT_FIELDS)
    objects = []
    seen: dict[tuple[str, int, int], int] = {}
    track_class: dict[tuple[str, int], tuple[int, int]] = {}
    for lineno, rec in records:
        video_id = _str_field(rec["video_id"], path, lineno, "video_id")
        frame = _frame(rec, meta, path, lineno)
        track_id = _nonneg(_int_field(rec["track_id"], path, lineno, "track_id"), path, lineno, "track_id")
        class_id = _nonneg(_int_field(rec["class_id"], path, lineno, "class_id"), path, lineno, "class_id")
        box = _parse_box(rec, path, lineno)
        okey = (video_id, frame, track_id)
        if okey in seen:
            raise MalformedRowError(
                path, lineno, "track_id", f"duplicate (video, frame, track) first seen on line {seen[okey]}"
            )
        seen[okey] = lineno
        prev = track_class.setdefault((video_id, track_id), (class_id, lineno))
        if prev[0] != class_id:
            raise MalformedRowError(
                path, lineno, "class_id",
                f"track {track_id} changes class {prev[0]} -> {class_id} (first seen on line {prev[1]})",
            )
        objects.append(GroundTruthObject(video_id, frame, class_id, track_id, box))
    return dataset_from_objects(objects, videos=meta.videos, class_names=meta.class_names or None)


def parse_detections(path: str | os.PathLike, format: str = "csv") -> list[Detection]:
    """Read detector output in file order.  No deduplication is performed."""
    meta, records = _iter_records(Path(path), format, DET_FIELDS)
    detections = []
    for lineno, rec in records:
        video_id = _str_field(rec["video_id"], path, lineno, "video_id")
        frame = _frame(rec, meta, path, lineno)
        class_id = _nonneg(_int_field(rec["class_id"], path, lineno, "class_id"), path, lineno, "class_id")
        box = _parse_box(rec, path, lineno)
        conf = _float_field(rec["confidence"], path, lineno, "confidence")
        if not 0.0 <= conf <= 1.0:
            raise MalformedRowError(path, lineno, "confidence", f"{conf!r} outside [0, 1]")
        detections.append(Detection(video_id, frame, class_id, box, conf))
    return detections


# ---------------------------------------------------------- serialization

def _num(x: float) -> str:
    return repr(float(x))


def dumps_ground_truth(dataset: Dataset, format: str = "csv") -> str:
    """Serialize ground truth.  The track column carries the instance id,
    so a split dataset re-reads with its split identities."""
    rows = sorted(
        (
            (inst.video_id, frame, inst.instance_id, inst.class_id, box)
            for inst in dataset.instances
            for frame, box in inst.occurrences
        ),
        key=lambda r: (r[0], r[1], r[2]),
    )
    buf = io.StringIO()
    if format == "csv":
        for vid, count in dataset.videos.items():
            buf.write(f"#video={vid}:{count}\n")
        for cid, name in (dataset.class_names or {}).items():
            buf.write(f"#class={cid}:{name}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(GT_FIELDS)
        for vid, frame, tid, cid, box in rows:
            writer.writerow([vid, frame, tid, cid, _num(box.x1), _num(box.y1), _num(box.x2), _num(box.y2)])
    elif format == "jsonl":
        meta = {"frame_base": 0, "videos": dict(dataset.videos)}
        if dataset.class_names:
            meta["class_names"] = {str(k): v for k, v in dataset.class_names.items()}
        buf.write(json.dumps({"meta": meta}) + "\n")
        for vid, frame, tid, cid, box in rows:
            rec = dict(zip(GT_FIELDS, (vid, frame, tid, cid, box.x1, box.y1, box.x2, box.y2)))
            buf.write(json.dumps(rec) + "\n")
    else:
        raise ValueError(f"unknown format {format!r}")
    return buf.getvalue()


def dumps_detections(detections: Iterable[Detection], format: str = "csv") -> str:
    buf = io.StringIO()
    if format == "csv":
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(DET_FIELDS)
        for d in detections:
            b = d.box
            writer.writerow(
                [d.video_id, d.frame_index, d.class_id, _num(b.x1), _num(b.y1), _num(b.x2), _num(b.y2),
                 _num(d.confidence)]
            )
    elif format == "jsonl":
        for d in detections:
            b = d.box
            rec = dict(zip(DET_FIELDS, (d.video_id, d.frame_index, d.class_id, b.x1, b.y1, b.x2, b.y2,
                                        d.confidence)))
            buf.write(json.dumps(rec) + "\n")
    else:
        raise ValueError(f"unknown format {format!r}")
    return buf.getvalue()


def write_ground_truth(dataset: Dataset, path: str | os.PathLike, format: str = "csv") -> None:
    atomic_write_text(path, dumps_ground_truth(dataset, format))


def write_detections(detections: Iterable[Detection], path: str | os.PathLike, format: str = "csv") -> None:
    atomic_write_text(path, dumps_detections(detections, format))


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see a partial file."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


# ------------------------------------------------------ VIDT construction

def split_tracklets(dataset: Dataset, max_gap: int = 10) -> Dataset:
    """Cut instances wherever more than ``max_gap`` consecutive frames are unannotated.

    The first piece keeps its instance id; later pieces get fresh ids above
    the largest id in the video, allotted in (instance id, frame) order.
    """
    if max_gap < 1:
        raise ValueError("max_gap must be a positive integer")
    by_video: dict[str, list[Instance]] = defaultdict(list)
    for inst in dataset.instances:
        by_video[inst.video_id].append(inst)

    out: list[Instance] = []
    for video_id, insts in by_video.items():
        next_id = max(i.instance_id for i in insts) + 1
        for inst in insts:  # already sorted by instance id
            pieces: list[list[tuple[int, BoundingBox]]] = [[inst.occurrences[0]]]
            for prev, cur in zip(inst.occurrences, inst.occurrences[1:]):
                if cur[0] - prev[0] - 1 > max_gap:
                    pieces.append([])
                pieces[-1].append(cur)
            for n, piece in enumerate(pieces):
                new_id = inst.instance_id if n == 0 else next_id
                if n > 0:
                    next_id += 1
                out.append(Instance(video_id, new_id, inst.class_id, tuple(piece), track_id=inst.track_id))
    return Dataset(videos=dataset.videos, instances=tuple(out), class_names=dataset.class_names)


def select_vidt(dataset: Dataset) -> Dataset:
    """Keep only videos where some instance enters after the video's first annotated frame."""
    first: dict[str, int] = {}
    for inst in dataset.instances:
        first[inst.video_id] = min(first.get(inst.video_id, inst.entry_frame), inst.entry_frame)
    keep = {inst.video_id for inst in dataset.instances if inst.entry_frame > first[inst.video_id]}
    return dataset.select_videos(keep)
