"""Invariants of the delay metric over randomly generated corpora."""

import dataclasses
import math

from hypothesis import given, settings
from hypothesis import strategies as st

from avgdelay.accuracy import mean_average_precision
from avgdelay.datamodel import Detection
from avgdelay.delay import DelayConfig, average_delay, threshold_for_fp_ratio
from avgdelay.matching import build_match_table, fp_count_at, tp_count_at

from conftest import box, corpus, hit, track

# confidences on a 1/1000 grid so strictly increasing maps keep them distinct
conf = st.integers(1, 1000).map(lambda k: k / 1000)


@st.composite
def scenes(draw):
    n_videos = draw(st.integers(1, 3))
    insts, dets = [], []
    for v in range(n_videos):
        for j in range(draw(st.integers(1, 4))):
            start = draw(st.integers(0, 20))
            inst = track(f"v{v}", j, range(start, start + draw(st.integers(1, 40))), cls=j % 2)
            insts.append(inst)
            for f in inst.frames:
                if draw(st.booleans()):
                    dets.append(hit(inst, f, draw(conf)))
        for _ in range(draw(st.integers(0, 30))):
            frame = draw(st.integers(0, 59))
            dets.append(Detection(f"v{v}", frame, draw(st.integers(0, 1)), box(draw(st.floats(0, 100)), 500), draw(conf)))
    ds = corpus(*insts, frames={f"v{v}": 60 for v in range(n_videos)})
    return ds, dets


@settings(max_examples=150, deadline=None)
@given(scenes(), st.integers(1, 60))
def test_clipped_delay_non_increasing_in_ratio(scene, window):
    ds, dets = scene
    table = build_match_table(ds, dets)
    prof = average_delay(ds, table, DelayConfig(window=window))
    d = [r.clipped_mean_delay for r in prof.records]
    assert all(b <= a for a, b in zip(d, d[1:]))
    gammas = [r.threshold for r in prof.records]
    assert all(b <= a for a, b in zip(gammas, gammas[1:]))
    assert 0.0 <= prof.average_delay <= window + 1e-9


@settings(max_examples=100, deadline=None)
@given(scenes(), st.lists(st.floats(0.0, 1.0), min_size=2, max_size=6))
def test_counts_monotone_in_threshold(scene, gammas):
    ds, dets = scene
    table = build_match_table(ds, dets)
    gammas = sorted(gammas)
    fps = [fp_count_at(table, g) for g in gammas]
    tps = [tp_count_at(table, g) for g in gammas]
    assert fps == sorted(fps, reverse=True)
    assert tps == sorted(tps, reverse=True)


@settings(max_examples=100, deadline=None)
@given(scenes(), st.floats(0.01, 5.0))
def test_threshold_respects_budget(scene, r):
    ds, dets = scene
    table = build_match_table(ds, dets)
    gamma = threshold_for_fp_ratio(table, r)
    assert fp_count_at(table, gamma) <= r * table.gt_object_count + 1e-9
    # the next more permissive candidate would overspend
    looser = [c for c in table.distinct_confidences if c < gamma]
    if looser:
        assert fp_count_at(table, looser[-1]) / table.gt_object_count > r


MAPS = {
    "half": lambda c: c / 2,
    "sqrt": math.sqrt,
    "cube": lambda c: c**3,
}


@settings(max_examples=100, deadline=None)
@given(scenes(), st.sampled_from(sorted(MAPS)))
def test_invariant_under_increasing_rescaling(scene, name):
    ds, dets = scene
    f = MAPS[name]
    rescaled = [dataclasses.replace(d, confidence=f(d.confidence)) for d in dets]
    a = build_match_table(ds, dets)
    b = build_match_table(ds, rescaled)
    prof_a, prof_b = average_delay(ds, a), average_delay(ds, b)
    assert prof_a.average_delay == prof_b.average_delay
    assert [r.clipped_mean_delay for r in prof_a.records] == [r.clipped_mean_delay for r in prof_b.records]
    assert mean_average_precision(a) == mean_average_precision(b)


@settings(max_examples=60, deadline=None)
@given(scenes())
def test_adding_fps_never_reduces_delay(scene):
    ds, dets = scene
    base = average_delay(ds, build_match_table(ds, dets))
    vid = next(iter(ds.videos))
    extra = [Detection(vid, f, 0, box(2000 + f, 2000), 0.999) for f in range(10)]
    worse = average_delay(ds, build_match_table(ds, dets + extra))
    assert worse.average_delay >= base.average_delay - 1e-12
