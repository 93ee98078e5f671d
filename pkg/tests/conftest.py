from __future__ import annotations

import pytest

from avgdelay.datamodel import BoundingBox, Dataset, Detection, Instance


def box(x=0.0, y=0.0, size=10.0):
    return BoundingBox(x, y, x + size, y + size)


def track(video, inst_id, frames, cls=0, b=None, track_id=None):
    b = b or box(20.0 * inst_id)
    return Instance(video, inst_id, cls, tuple((f, b) for f in frames),
                    track_id=inst_id if track_id is None else track_id)


def corpus(*instances, frames=None):
    videos = {}
    for inst in instances:
        videos[inst.video_id] = max(videos.get(inst.video_id, 0), inst.last_frame + 1)
    if frames:
        videos.update(frames)
    return Dataset(videos=videos, instances=tuple(instances))


def hit(inst, frame, conf, cls=None):
    """A perfectly localised detection of ``inst`` at ``frame``."""
    b = dict(inst.occurrences)[frame]
    return Detection(inst.video_id, frame, inst.class_id if cls is None else cls, b, conf)


def miss(video, frame, conf, cls=0, x=1000.0):
    """A detection far away from any ground truth."""
    return Detection(video, frame, cls, box(x, 1000.0), conf)


@pytest.fixture
def tmp_csv(tmp_path):
    def write(name, text):
        path = tmp_path / name
        path.write_text(text)
        return path

    return write


# one line per acceptance criterion, echoed in the terminal summary;
# parametrized criteria fold every case into the same line
ACCEPTANCE: dict[int, tuple[str, bool, list[str]]] = {}


def record_criterion(number, name, ok, detail=""):
    _, prev_ok, details = ACCEPTANCE.get(number, (name, True, []))
    if detail:
        details.append(detail)
    ACCEPTANCE[number] = (name, prev_ok and ok, details)
    print(_criterion_line(number))
    return ok


def _criterion_line(number):
    name, ok, details = ACCEPTANCE[number]
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}"
    return line + (f"  [{'; '.join(details)}]" if details else "")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(_criterion_line(number))
