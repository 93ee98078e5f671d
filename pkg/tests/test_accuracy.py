import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avgdelay.accuracy import average_precision, mean_average_precision, per_class_ap, precision_recall_curve
from avgdelay.matching import build_match_table

from conftest import box, corpus, hit, miss, track
from oracles import brute_ap


def _two_objects(dets_fn):
    a = track("v", 0, [0])
    b = track("v", 1, [0])
    ds = corpus(a, b)
    return build_match_table(ds, dets_fn(a, b))


def test_tp_fp_tp_example():
    table = _two_objects(lambda a, b: [hit(a, 0, 0.9), miss("v", 0, 0.8), hit(b, 0, 0.7)])
    curve = precision_recall_curve(table, 0)
    assert curve.points == [(0.5, 1.0), (0.5, 0.5), (1.0, pytest.approx(2 / 3))]
    assert average_precision(table, 0) == pytest.approx(5 / 6)


def test_eleven_point_example():
    table = _two_objects(lambda a, b: [hit(a, 0, 0.9), miss("v", 0, 0.8), hit(b, 0, 0.7)])
    # recall points 0.0..0.5 see precision 1, 0.6..1.0 see 2/3
    assert average_precision(table, 0, "11point") == pytest.approx((6 * 1.0 + 5 * 2 / 3) / 11)


def test_perfect_and_empty():
    perfect = _two_objects(lambda a, b: [hit(a, 0, 0.9), hit(b, 0, 0.8)])
    assert average_precision(perfect, 0) == 1.0
    assert average_precision(perfect, 0, "11point") == 1.0
    assert average_precision(_two_objects(lambda a, b: []), 0) == 0.0


def test_class_without_ground_truth_is_skipped():
    inst = track("v", 0, [0], cls=0)
    table = build_match_table(corpus(inst), [hit(inst, 0, 0.9), miss("v", 0, 0.8, cls=7)])
    assert average_precision(table, 7) is None
    assert per_class_ap(table) == {0: 1.0}
    assert mean_average_precision(table) == 1.0


def test_unknown_interpolation():
    table = _two_objects(lambda a, b: [hit(a, 0, 0.9)])
    with pytest.raises(ValueError):
        average_precision(table, 0, "101point")


def test_map_is_unweighted_mean():
    big = [track("v", j, [0], cls=0, b=box(20 * j)) for j in range(4)]
    small = track("v", 9, [0], cls=1, b=box(500))
    dets = [hit(i, 0, 0.9) for i in big]
    ds = corpus(*big, small)
    table = build_match_table(ds, dets)
    assert per_class_ap(table) == {0: 1.0, 1: 0.0}
    assert mean_average_precision(table) == 0.5


def _random_scene(seed, n_classes=2):
    rng = random.Random(seed)
    insts = [track("v", j, [0, 1, 2], cls=j % n_classes, b=box(12 * j)) for j in range(6)]
    dets = []
    for inst in insts:
        for f in inst.frames:
            if rng.random() < 0.7:
                dets.append(hit(inst, f, rng.random()))
    for _ in range(rng.randrange(12)):
        dets.append(miss("v", rng.randrange(3), rng.random(), cls=rng.randrange(n_classes)))
    ds = corpus(*insts)
    return build_match_table(ds, dets)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6))
def test_ap_matches_oracle(seed):
    table = _random_scene(seed)
    for cid in (0, 1):
        assert average_precision(table, cid) == pytest.approx(brute_ap(table, cid), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_ap_bounds(seed):
    table = _random_scene(seed)
    for cid in (0, 1):
        ap = average_precision(table, cid)
        assert 0.0 <= ap <= 1.0
        assert 0.0 <= average_precision(table, cid, "11point") <= 1.0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_ap_unchanged_by_monotone_confidence_map(seed):
    table = _random_scene(seed)
    ap = average_precision(table, 0)
    ds_insts = [track("v", j, [0, 1, 2], cls=j % 2, b=box(12 * j)) for j in range(6)]
    dets = [e.detection for e in sorted(table.entries, key=lambda e: e.index)]
    squashed = [type(d)(d.video_id, d.frame_index, d.class_id, d.box, d.confidence ** 3) for d in dets]
    table2 = build_match_table(corpus(*ds_insts), squashed)
    assert average_precision(table2, 0) == pytest.approx(ap, abs=1e-12)
