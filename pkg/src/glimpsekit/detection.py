"""Oracle detection inside glimpses and precision/recall/F1 bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Sized, Tuple

from .geometry import BBox, Scene, SceneObject, iou

IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class Detection:
    box: BBox
    class_id: int
    score: float = 1.0
    source_glimpse: int = 0
    object_id_hint: Optional[int] = None


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0


@dataclass
class MatchResult:
    counts: Dict[int, ClassCounts]
    pairs: List[Tuple[Detection, int, float]] = field(default_factory=list)
    gt_classes: Tuple[int, ...] = ()


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float


@dataclass
class CurvePoint:
    k: int
    per_class: Dict[int, PRF]
    mean: PRF


@dataclass
class MetricCurve:
    points: List[CurvePoint]

    def recall(self, k: int) -> float:
        """Class-averaged recall after ``k`` glimpses; held flat past the last glimpse."""
        k = min(k, self.points[-1].k)
        return self.points[k].mean.recall


def oracle_detect(scene: Scene, window: BBox, step: int = 0) -> List[Detection]:
    """Every object touching ``window``, clipped to it, with its true class."""
    dets = []
    for obj in scene.objects:
        clip = obj.box.intersection(window)
        if clip is not None:
            dets.append(Detection(clip, obj.class_id, 1.0, step, obj.id))
    return dets


def dedupe_detections(dets: Sequence[Detection]) -> List[Detection]:
    """Keep the largest clip per oracle object; hint-less detections pass through.

    Ties on area keep the earliest detection. Output order follows the
    first appearance of each object.
    """
    best: Dict[int, int] = {}
    for i, det in enumerate(dets):
        hint = det.object_id_hint
        if hint is None:
            continue
        j = best.get(hint)
        if j is None or det.box.area > dets[j].box.area:
            best[hint] = i
    out = []
    emitted = set()
    for det in dets:
        hint = det.object_id_hint
        if hint is None:
            out.append(det)
        elif hint not in emitted:
            emitted.add(hint)
            out.append(dets[best[hint]])
    return out


def match_detections(
    dets: Sequence[Detection],
    gt: Sequence[SceneObject],
    iou_threshold: float = IOU_THRESHOLD,
) -> MatchResult:
    """Class-wise greedy one-to-one matching in descending IoU order."""
    if not 0 < iou_threshold <= 1:
        raise ValueError("iou_threshold must lie in (0, 1]")
    candidates = []
    for i, det in enumerate(dets):
        for obj in gt:
            if obj.class_id != det.class_id:
                continue
            v = iou(det.box, obj.box)
            if v >= iou_threshold:
                candidates.append((-v, i, obj.id))
    candidates.sort()

    det_used = set()
    gt_used = set()
    pairs = []
    for neg_v, i, gid in candidates:
        if i in det_used or gid in gt_used:
            continue
        det_used.add(i)
        gt_used.add(gid)
        pairs.append((dets[i], gid, -neg_v))

    classes = sorted({o.class_id for o in gt} | {d.class_id for d in dets})
    counts = {c: ClassCounts() for c in classes}
    for i, det in enumerate(dets):
        if i in det_used:
            counts[det.class_id].tp += 1
        else:
            counts[det.class_id].fp += 1
    for obj in gt:
        if obj.id not in gt_used:
            counts[obj.class_id].fn += 1
    return MatchResult(counts, pairs, tuple(sorted({o.class_id for o in gt})))


def _ratio(a: float, b: float) -> float:
    return a / b if b else 0.0


def prf(c: ClassCounts) -> PRF:
    p = _ratio(c.tp, c.tp + c.fp)
    r = _ratio(c.tp, c.tp + c.fn)
    return PRF(p, r, _ratio(2 * p * r, p + r))


def prf_metrics(m: MatchResult) -> Tuple[Dict[int, PRF], PRF]:
    """Per-class scores and their unweighted mean over ground-truth classes."""
    per_class = {c: prf(cnt) for c, cnt in m.counts.items()}
    present = [per_class[c] for c in m.gt_classes]
    if not present:
        return per_class, PRF(0.0, 0.0, 0.0)
    n = len(present)
    mean = PRF(
        sum(x.precision for x in present) / n,
        sum(x.recall for x in present) / n,
        sum(x.f1 for x in present) / n,
    )
    return per_class, mean


def metric_curve(
    scene: Scene,
    glimpses: Sized,
    detections_per_glimpse: Sequence[Iterable[Detection]],
    iou_threshold: float = IOU_THRESHOLD,
) -> MetricCurve:
    """Scores after each prefix of glimpses, ``k = 0 .. len(glimpses)``.

    ``detections_per_glimpse[s]`` holds what the detector reported for
    glimpse step ``s``; missing trailing steps count as empty.
    """
    n_glimpses = len(glimpses)
    groups = [list(g) for g in detections_per_glimpse]
    points = []
    pool: List[Detection] = []
    for k in range(n_glimpses + 1):
        if k > 0 and k - 1 < len(groups):
            pool.extend(groups[k - 1])
        m = match_detections(dedupe_detections(pool), scene.objects, iou_threshold)
        per_class, mean = prf_metrics(m)
        points.append(CurvePoint(k, per_class, mean))
    return MetricCurve(points)


def oracle_curve(scene: Scene, windows: Sequence[BBox], iou_threshold: float = IOU_THRESHOLD) -> MetricCurve:
    dets = [oracle_detect(scene, w, step) for step, w in enumerate(windows)]
    return metric_curve(scene, windows, dets, iou_threshold)
