import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glimpsekit.detection import (
    ClassCounts,
    Detection,
    dedupe_detections,
    match_detections,
    metric_curve,
    oracle_curve,
    oracle_detect,
    prf,
)
from glimpsekit.geometry import BBox, Scene, SceneObject, iou


def test_oracle_detect_examples():
    scene = Scene(100, 100, [SceneObject(0, 1, BBox(10, 10, 20, 20))])
    (det,) = oracle_detect(scene, BBox(0, 0, 50, 50))
    assert det.box == BBox(10, 10, 20, 20) and det.class_id == 1 and det.object_id_hint == 0
    assert oracle_detect(scene, BBox(60, 60, 30, 30)) == []
    (half,) = oracle_detect(scene, BBox(20, 0, 50, 50))
    assert iou(half.box, scene.objects[0].box) == 0.5


def test_dedupe_keeps_largest_clip():
    a = Detection(BBox(0, 0, 8, 10), 0, object_id_hint=3)
    b = Detection(BBox(0, 0, 10, 10), 0, object_id_hint=3)
    c = Detection(BBox(50, 50, 4, 4), 0, object_id_hint=4)
    assert dedupe_detections([a, b, c]) == [b, c]
    assert dedupe_detections([a, c]) == [a, c]
    assert dedupe_detections([]) == []


def test_match_examples():
    gt = [SceneObject(0, 0, BBox(0, 0, 10, 10))]
    exact = Detection(BBox(0, 0, 10, 10), 0)
    m = match_detections([exact], gt)
    assert (m.counts[0].tp, m.counts[0].fp, m.counts[0].fn) == (1, 0, 0)

    low = Detection(BBox(0, 0, 4, 10), 0)  # IoU 0.4
    m = match_detections([low], gt)
    assert (m.counts[0].tp, m.counts[0].fp, m.counts[0].fn) == (0, 1, 1)

    m = match_detections([exact, exact], gt)
    assert (m.counts[0].tp, m.counts[0].fp, m.counts[0].fn) == (1, 1, 0)


def test_match_is_class_aware():
    gt = [SceneObject(0, 0, BBox(0, 0, 10, 10))]
    m = match_detections([Detection(BBox(0, 0, 10, 10), 1)], gt)
    assert m.counts[0].fn == 1 and m.counts[1].fp == 1


def test_match_prefers_higher_iou():
    gt = [SceneObject(0, 0, BBox(0, 0, 10, 10)), SceneObject(1, 0, BBox(2, 0, 10, 10))]
    d = Detection(BBox(2, 0, 10, 10), 0)
    m = match_detections([d], gt)
    assert m.pairs[0][1] == 1


@pytest.mark.parametrize(
    "counts,expected",
    [((1, 0, 0), (1.0, 1.0, 1.0)), ((0, 0, 5), (0.0, 0.0, 0.0)), ((2, 2, 2), (0.5, 0.5, 0.5))],
)
def test_prf_examples(counts, expected):
    r = prf(ClassCounts(*counts))
    assert (r.precision, r.recall, r.f1) == expected


def _scene():
    return Scene(
        200,
        200,
        [
            SceneObject(0, 0, BBox(10, 10, 20, 20)),
            SceneObject(1, 1, BBox(120, 30, 30, 20)),
            SceneObject(2, 0, BBox(90, 90, 20, 20)),
        ],
    )


def test_metric_curve_k0_and_covering():
    scene = _scene()
    tiles = [BBox(x, y, 100, 100) for y in (0, 100) for x in (0, 100)]
    curve = oracle_curve(scene, tiles)
    assert [p.k for p in curve.points] == [0, 1, 2, 3, 4]
    assert all(r.recall == 0.0 for r in curve.points[0].per_class.values())
    # object 2 straddles all four tiles; no clip reaches IoU 0.5
    last = curve.points[-1].per_class
    assert last[1].recall == 1.0
    assert last[0].recall == 0.5 and last[0].precision == 0.5

    # shifted tiling holds every object whole
    tiles = [BBox(x, y, 100, 100) for y in (0, 80) for x in (0, 80)]
    assert oracle_curve(scene, tiles).points[-1].mean == oracle_curve(scene, [BBox(0, 0, 200, 200)]).points[-1].mean
    assert oracle_curve(scene, tiles).points[-1].mean.recall == 1.0


def test_metric_curve_external_steps():
    scene = _scene()
    dets = [[Detection(BBox(10, 10, 20, 20), 0)], [], [Detection(BBox(120, 30, 30, 20), 1)]]
    curve = metric_curve(scene, [0, 1, 2], dets)
    assert curve.points[1].per_class[0].recall == 0.5
    assert curve.points[3].per_class[1].recall == 1.0
    assert curve.recall(99) == curve.points[3].mean.recall


window = st.builds(BBox, st.integers(0, 150), st.integers(0, 150), st.integers(10, 50), st.integers(10, 50))


@settings(max_examples=60, deadline=None)
@given(st.lists(window, min_size=1, max_size=6))
def test_counts_consistent_and_tp_monotone(windows):
    scene = _scene()
    curve = oracle_curve(scene, windows)
    prev = -1
    for k in range(len(windows) + 1):
        dets = dedupe_detections([d for s, w in enumerate(windows[:k]) for d in oracle_detect(scene, w, s)])
        m = match_detections(dets, scene.objects)
        tp = sum(c.tp for c in m.counts.values())
        fn = sum(c.fn for c in m.counts.values())
        assert tp + fn == len(scene.objects)
        assert tp >= prev
        prev = tp
        assert 0.0 <= curve.points[k].mean.recall <= 1.0
