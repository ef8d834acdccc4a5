"""Box geometry and duplicate suppression: IoU, hard NMS, and soft-NMS with
gaussian or linear score decay. Suppression is per-class; detections of
different classes never affect each other."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class Detection:
    """One scored, classed axis-aligned box, (x_min, y_min, x_max, y_max) in pixels."""

    box: tuple[float, float, float, float]
    score: float
    class_id: int = 0

    def __post_init__(self):
        x1, y1, x2, y2 = self.box
        if x1 > x2 or y1 > y2:
            raise ValueError(f"box corners out of order: {self.box}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.class_id < 0:
            raise ValueError(f"negative class id {self.class_id}")


@dataclass(frozen=True)
class SuppressionConfig:
    """Knobs for suppression: overlap threshold, gaussian width, decay mode,
    and the score below which decayed detections are dropped."""

    eta0: float = 0.5
    sigma: float = 0.5
    mode: str = "gaussian"
    score_floor: float = 0.001

    MODES = ("hard", "gaussian", "linear")

    def __post_init__(self):
        if not 0.0 <= self.eta0 <= 1.0:
            raise ValueError(f"eta0 {self.eta0} outside [0, 1]")
        if self.sigma <= 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.mode not in self.MODES:
            raise ValueError(f"mode {self.mode!r} not one of {self.MODES}")
        if self.score_floor < 0.0:
            raise ValueError(f"score_floor must be >= 0, got {self.score_floor}")


def iou(a: tuple[float, float, float, float], b: tuple[float, float, float, float]) -> float:
    """Intersection over union of two (x1, y1, x2, y2) boxes; 0 for a degenerate union."""
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def _ranked(dets: list[Detection]) -> list[int]:
    # Total order: score descending, ties by original input position.
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))


def nms(dets: list[Detection], eta0: float = 0.5) -> list[Detection]:
    """Greedy hard suppression: keep each score leader, discard same-class
    detections overlapping it with IoU > eta0. Output sorted by descending
    score, input order breaking ties."""
    kept: list[Detection] = []
    alive = [True] * len(dets)
    for i in _ranked(dets):
        if not alive[i]:
            continue
        leader = dets[i]
        kept.append(leader)
        for j in range(len(dets)):
            if alive[j] and j != i and dets[j].class_id == leader.class_id:
                if iou(leader.box, dets[j].box) > eta0:
                    alive[j] = False
        alive[i] = False
    return kept


def soft_nms(dets: list[Detection], cfg: SuppressionConfig = SuppressionConfig()) -> list[Detection]:
    """Score-decay suppression.

    Iteratively moves the current score leader to the output, then rescales
    every remaining same-class score: gaussian mode multiplies by
    exp(-iou^2 / sigma) unconditionally; linear mode multiplies by (1 - iou)
    only where iou >= eta0; hard mode zeroes scores where iou > eta0.
    Detections whose score falls below ``cfg.score_floor`` are dropped.
    Scores never increase and box geometry is never modified.
    """
    if cfg.mode == "hard":
        return nms(dets, cfg.eta0)
    remaining = list(dets)
    scores = [d.score for d in dets]
    order = list(range(len(dets)))
    out: list[Detection] = []
    while order:
        best = min(range(len(order)), key=lambda t: (-scores[order[t]], order[t]))
        leader_idx = order.pop(best)
        leader = remaining[leader_idx]
        out.append(replace(leader, score=scores[leader_idx]))
        survivors = []
        for idx in order:
            if remaining[idx].class_id == leader.class_id:
                overlap = iou(leader.box, remaining[idx].box)
                if cfg.mode == "gaussian":
                    scores[idx] *= math.exp(-(overlap * overlap) / cfg.sigma)
                elif overlap >= cfg.eta0:
                    scores[idx] *= 1.0 - overlap
            if scores[idx] >= cfg.score_floor:
                survivors.append(idx)
        order = survivors
    return out
