"""Detection evaluation: greedy prediction-to-truth matching, precision and
recall, average precision by monotone-envelope integration of the PR curve,
and the 10-threshold mAP sweep (0.50 to 0.95 in steps of 0.05)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .postprocess import Detection, iou

if TYPE_CHECKING:  # prediction records live in dataio; evaluate duck-types them
    from .dataio import PredictionRecord


SWEEP_THRESHOLDS: tuple[float, ...] = tuple((10 + i) / 20 for i in range(10))
DEFAULT_SCORE_THRESHOLD = 0.25  # reporting operating point; a convention, not a measured value


@dataclass(frozen=True)
class GroundTruthBox:
    """One annotated box on one image."""

    image_id: str
    box: tuple[float, float, float, float]
    class_id: int = 0

    def __post_init__(self):
        if not self.image_id:
            raise ValueError("image_id must be non-empty")
        x1, y1, x2, y2 = self.box
        if x1 > x2 or y1 > y2:
            raise ValueError(f"box corners out of order: {self.box}")
        if self.class_id < 0:
            raise ValueError(f"negative class id {self.class_id}")


@dataclass
class PRCurve:
    """Cumulative (recall, precision) staircase plus the final operating counts."""

    points: list[tuple[float, float]]
    tp: int
    fp: int
    fn: int

    def __post_init__(self):
        recalls = [r for r, _ in self.points]
        if any(b < a for a, b in zip(recalls, recalls[1:])):
            raise ValueError("recall must be non-decreasing along the curve")
        for r, p in self.points:
            if not (0.0 <= r <= 1.0 and 0.0 <= p <= 1.0):
                raise ValueError(f"PR point ({r}, {p}) outside the unit square")


def match_detections(
    preds: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    iou_threshold: float,
) -> list[bool]:
    """Greedy single-image, single-class matching; returns a TP flag per prediction.

    Predictions are processed in descending score (input order breaking ties);
    each claims the not-yet-matched ground truth of highest IoU when that IoU
    reaches the threshold (IoU ties resolve to the earliest ground-truth
    index). FN count is len(gts) minus the number of True flags.
    """
    ids = {g.image_id for g in gts}
    if len(ids) > 1:
        raise ValueError(f"ground truths span multiple images: {sorted(ids)}")
    classes = {g.class_id for g in gts} | {p.class_id for p in preds}
    if len(classes) > 1:
        raise ValueError(f"matching is per-class; got classes {sorted(classes)}")
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    taken = [False] * len(gts)
    flags = [False] * len(preds)
    for i in order:
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            overlap = iou(preds[i].box, gt.box)
            if overlap > best_iou:
                best_iou, best_j = overlap, j
        if best_j >= 0 and best_iou >= iou_threshold:
            taken[best_j] = True
            flags[i] = True
    return flags


def precision_recall(tp: int, fp: int, fn: int) -> tuple[float, float]:
    """P = TP/(TP+FP), R = TP/(TP+FN); degenerate denominators yield 0."""
    if tp < 0 or fp < 0 or fn < 0:
        raise ValueError("counts must be non-negative")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall


def pr_curve(sorted_flags: Sequence[bool], total_gt: int) -> PRCurve:
    """Cumulative PR staircase from TP flags already ranked by descending score."""
    points = []
    tp = fp = 0
    for flag in sorted_flags:
        if flag:
            tp += 1
        else:
            fp += 1
        p, r = precision_recall(tp, fp, total_gt - tp)
        points.append((r, p))
    return PRCurve(points=points, tp=tp, fp=fp, fn=total_gt - tp)


def average_precision(curve: PRCurve, interpolation: str = "all_points") -> float:
    """Area under the PR staircase.

    "all_points": precision replaced by its running maximum from the right,
    then exact rectangle integration over recall increments. "101point":
    mean of the enveloped precision sampled at recalls 0.00, 0.01, ..., 1.00
    (cross-check variant).
    """
    if not curve.points:
        return 0.0
    recalls = np.array([r for r, _ in curve.points])
    envelope = np.maximum.accumulate(np.array([p for _, p in curve.points])[::-1])[::-1]
    if interpolation == "all_points":
        previous = np.concatenate([[0.0], recalls[:-1]])
        return float(((recalls - previous) * envelope).sum())
    if interpolation == "101point":
        samples = np.linspace(0.0, 1.0, 101)
        idx = np.searchsorted(recalls, samples, side="left")
        values = np.where(idx < len(recalls), envelope[np.minimum(idx, len(recalls) - 1)], 0.0)
        return float(values.mean())
    raise ValueError(f"unknown interpolation {interpolation!r}")


@dataclass
class EvalReport:
    """Per-class APs, the mAP sweep, and the operating-point precision/recall.

    ``ap`` maps class_id -> {iou_threshold -> AP}; ``map_per_threshold``
    averages over classes; ``map_50_95`` is the arithmetic mean of the ten
    sweep mAPs. Precision/recall are micro-averaged over classes at IoU 0.50
    for predictions with score >= ``score_threshold``.
    """

    ap: dict[int, dict[float, float]]
    map_per_threshold: dict[float, float]
    map_50: float
    map_50_95: float
    precision: float
    recall: float
    score_threshold: float
    thresholds: tuple[float, ...]
    class_ids: tuple[int, ...]
    ignored_prediction_classes: dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        """Canonical field set; the text rendering mirrors this exactly."""
        return {
            "precision": self.precision,
            "recall": self.recall,
            "map_50": self.map_50,
            "map_50_95": self.map_50_95,
            "score_threshold": self.score_threshold,
            "thresholds": list(self.thresholds),
            "map_per_threshold": {f"{t:.2f}": v for t, v in self.map_per_threshold.items()},
            "ap_per_class": {
                str(c): {f"{t:.2f}": v for t, v in per.items()} for c, per in self.ap.items()
            },
            "ignored_prediction_classes": {
                str(c): n for c, n in self.ignored_prediction_classes.items()
            },
        }

    def to_text(self) -> str:
        """Key-value report, one metric per line, mirroring to_dict field-for-field."""
        lines = [
            f"precision {self.precision:.6f}",
            f"recall {self.recall:.6f}",
            f"map_50 {self.map_50:.6f}",
            f"map_50_95 {self.map_50_95:.6f}",
            f"score_threshold {self.score_threshold:.6f}",
            "thresholds " + ",".join(f"{t:.2f}" for t in self.thresholds),
        ]
        for t in self.thresholds:
            lines.append(f"map@{t:.2f} {self.map_per_threshold[t]:.6f}")
        for c in self.class_ids:
            for t in self.thresholds:
                lines.append(f"ap[class={c}][iou={t:.2f}] {self.ap[c][t]:.6f}")
        for c, n in sorted(self.ignored_prediction_classes.items()):
            lines.append(f"ignored_predictions[class={c}] {n}")
        return "\n".join(lines) + "\n"


def _group_by_image(items: Iterable, key=lambda item: item.image_id) -> dict:
    grouped: dict = {}
    for item in items:
        grouped.setdefault(key(item), []).append(item)
    return grouped


def _class_flags(
    preds: list[tuple[int, "PredictionRecord"]],
    gts: list[GroundTruthBox],
    threshold: float,
) -> list[tuple[float, int, bool]]:
    """(score, input index, is_tp) for one class at one IoU threshold, all images pooled."""
    gt_by_image = _group_by_image(gts)
    results: list[tuple[float, int, bool]] = []
    for image_id, image_preds in _group_by_image(preds, key=lambda t: t[1].image_id).items():
        image_preds.sort(key=lambda t: (-t[1].score, t[0]))
        dets = [Detection(box=p.box, score=p.score, class_id=0) for _, p in image_preds]
        truths = [
            GroundTruthBox(image_id=g.image_id, box=g.box, class_id=0)
            for g in gt_by_image.get(image_id, [])
        ]
        flags = match_detections(dets, truths, threshold)
        results.extend(
            (p.score, idx, flag) for (idx, p), flag in zip(image_preds, flags)
        )
    return results


def evaluate(
    preds: Sequence["PredictionRecord"],
    gts: Sequence[GroundTruthBox],
    thresholds: Sequence[float] | None = None,
    score_threshold: float = DEFAULT_SCORE_THRESHOLD,
    interpolation: str = "all_points",
) -> EvalReport:
    """Pool matches per class and per IoU threshold across images; build AP,
    mAP, the sweep mean, and operating-point precision/recall.

    Classes are those present in the ground truth; predictions for any other
    class are excluded from mAP but counted in the report. The result is
    invariant to input ordering (the internal sort is total: score descending,
    then input index).
    """
    thresholds = tuple(thresholds) if thresholds is not None else SWEEP_THRESHOLDS
    if any(not 0.0 < t <= 1.0 for t in thresholds):
        raise ValueError(f"thresholds must lie in (0, 1]: {thresholds}")
    class_ids = tuple(sorted({g.class_id for g in gts}))
    known = set(class_ids)
    ignored: dict[int, int] = {}
    preds_by_class: dict[int, list] = {c: [] for c in class_ids}
    for idx, p in enumerate(preds):
        if p.class_id in known:
            preds_by_class[p.class_id].append((idx, p))
        else:
            ignored[p.class_id] = ignored.get(p.class_id, 0) + 1
    gts_by_class: dict[int, list] = {c: [] for c in class_ids}
    for g in gts:
        gts_by_class[g.class_id].append(g)

    ap: dict[int, dict[float, float]] = {c: {} for c in class_ids}
    for c in class_ids:
        for t in thresholds:
            flags = _class_flags(preds_by_class[c], gts_by_class[c], t)
            flags.sort(key=lambda item: (-item[0], item[1]))
            curve = pr_curve([f for _, _, f in flags], len(gts_by_class[c]))
            ap[c][t] = average_precision(curve, interpolation)

    map_per_threshold = {
        t: (sum(ap[c][t] for c in class_ids) / len(class_ids) if class_ids else 0.0)
        for t in thresholds
    }
    map_50 = map_per_threshold.get(0.5, 0.0)
    map_50_95 = sum(map_per_threshold.values()) / len(thresholds) if thresholds else 0.0

    tp = fp = fn = 0
    for c in class_ids:
        confident = [(i, p) for i, p in preds_by_class[c] if p.score >= score_threshold]
        flags = _class_flags(confident, gts_by_class[c], 0.5)
        c_tp = sum(1 for _, _, f in flags if f)
        tp += c_tp
        fp += len(flags) - c_tp
        fn += len(gts_by_class[c]) - c_tp
    precision, recall = precision_recall(tp, fp, fn)

    return EvalReport(
        ap=ap,
        map_per_threshold=map_per_threshold,
        map_50=map_50,
        map_50_95=map_50_95,
        precision=precision,
        recall=recall,
        score_threshold=score_threshold,
        thresholds=thresholds,
        class_ids=class_ids,
        ignored_prediction_classes=ignored,
    )
