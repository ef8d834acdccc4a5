"""Suppression tests: IoU geometry, hard NMS vs a brute-force reference, and
both soft-NMS decay modes against direct evaluation and the O(n^2) oracle."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reasdet.postprocess import Detection, SuppressionConfig, iou, nms, soft_nms

from oracles import nms_oracle, soft_nms_gaussian_oracle
from support import random_boxes


def _dets(boxes, scores, classes):
    return [Detection(box=b, score=s, class_id=c) for b, s, c in zip(boxes, scores, classes)]


class TestIou:
    def test_identical(self):
        assert iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0

    def test_disjoint(self):
        assert iou((0, 0, 1, 1), (5, 5, 6, 6)) == 0.0

    def test_analytic_overlap(self):
        assert iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7)

    def test_degenerate(self):
        assert iou((1, 1, 1, 1), (1, 1, 1, 1)) == 0.0

    coord = st.floats(min_value=0.0, max_value=100.0)

    @given(coord, coord, coord, coord, coord, coord, coord, coord)
    @settings(max_examples=100, deadline=None)
    def test_range_and_symmetry(self, ax, ay, aw, ah, bx, by, bw, bh):
        a = (ax, ay, ax + aw, ay + ah)
        b = (bx, by, bx + bw, by + bh)
        value = iou(a, b)
        assert 0.0 <= value <= 1.0
        assert value == iou(b, a)


class TestHardNms:
    def test_single_detection(self):
        d = Detection(box=(0, 0, 1, 1), score=0.7)
        assert nms([d], 0.5) == [d]

    def test_identical_pair_keeps_top(self):
        dets = _dets([(0, 0, 2, 2)] * 2, [0.9, 0.8], [0, 0])
        kept = nms(dets, 0.5)
        assert len(kept) == 1 and kept[0].score == 0.9

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(0)
        for trial in range(20):
            boxes, scores, classes = random_boxes(rng, 50, classes=3)
            kept = nms(_dets(boxes, scores, classes), 0.5)
            want_indices = nms_oracle(boxes, scores, classes, 0.5)
            want = [(boxes[i], scores[i], classes[i]) for i in want_indices]
            got = [(d.box, d.score, d.class_id) for d in kept]
            assert got == want, f"trial {trial}"

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        boxes, scores, classes = random_boxes(rng, 30)
        once = nms(_dets(boxes, scores, classes), 0.5)
        assert nms(once, 0.5) == once

    def test_classes_do_not_interact(self):
        dets = _dets([(0, 0, 2, 2)] * 2, [0.9, 0.8], [0, 1])
        assert len(nms(dets, 0.5)) == 2


class TestSoftNms:
    def test_disjoint_boxes_unchanged_in_every_mode(self):
        boxes = [(0, 0, 1, 1), (10, 10, 11, 11), (20, 20, 21, 21)]
        dets = _dets(boxes, [0.9, 0.5, 0.7], [0, 0, 0])
        for mode in SuppressionConfig.MODES:
            out = soft_nms(dets, SuppressionConfig(mode=mode))
            assert sorted(d.score for d in out) == sorted([0.5, 0.7, 0.9]), mode
            assert {d.box for d in out} == set(boxes)

    def test_gaussian_fixed_case(self):
        dets = _dets([(0, 0, 2, 2)] * 2, [0.9, 0.8], [0, 0])
        out = soft_nms(dets, SuppressionConfig(mode="gaussian", sigma=0.5))
        assert out[0].score == 0.9
        assert out[1].score == pytest.approx(0.8 * math.exp(-2.0), abs=1e-6)
        assert out[1].score == pytest.approx(0.10827, abs=1e-5)

    def test_linear_fixed_case(self):
        # overlap 0.6 >= eta0 0.5 decays 0.8 to exactly 0.8 * (1 - 0.6)
        leader = (0.0, 0.0, 10.0, 10.0)
        other = (0.0, 2.5, 10.0, 12.5)  # IoU = 75/125 = 0.6 exactly
        assert iou(leader, other) == pytest.approx(0.6, abs=1e-12)
        dets = _dets([leader, other], [0.9, 0.8], [0, 0])
        out = soft_nms(dets, SuppressionConfig(mode="linear", eta0=0.5))
        assert out[1].score == pytest.approx(0.8 * (1 - 0.6), abs=1e-12)

    def test_linear_below_threshold_unchanged(self):
        leader = (0.0, 0.0, 10.0, 10.0)
        other = (0.0, 6.0, 10.0, 16.0)  # IoU = 40/160 = 0.25 < eta0
        dets = _dets([leader, other], [0.9, 0.8], [0, 0])
        out = soft_nms(dets, SuppressionConfig(mode="linear", eta0=0.5))
        assert out[1].score == 0.8

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(2)
        cfg = SuppressionConfig(mode="gaussian", sigma=0.5, score_floor=0.001)
        for trial in range(50):
            count = int(rng.integers(1, 51))
            boxes, scores, classes = random_boxes(rng, count, classes=3)
            out = soft_nms(_dets(boxes, scores, classes), cfg)
            want = soft_nms_gaussian_oracle(boxes, scores, classes, cfg.sigma, cfg.score_floor)
            assert len(out) == len(want), f"trial {trial}"
            for d, (idx, score) in zip(out, want):
                assert d.box == boxes[idx] and d.class_id == classes[idx]
                assert abs(d.score - score) <= 1e-9

    def test_scores_never_increase_and_geometry_preserved(self):
        rng = np.random.default_rng(3)
        boxes, scores, classes = random_boxes(rng, 40, classes=2)
        by_key = {}
        for b, s, c in zip(boxes, scores, classes):
            by_key[(b, c)] = max(by_key.get((b, c), 0.0), s)
        out = soft_nms(_dets(boxes, scores, classes), SuppressionConfig())
        assert len(out) <= len(boxes)
        for d in out:
            assert (d.box, d.class_id) in by_key
            assert d.score <= by_key[(d.box, d.class_id)] + 1e-12

    def test_score_floor_discards(self):
        dets = _dets([(0, 0, 2, 2)] * 3, [0.9, 0.5, 0.4], [0, 0, 0])
        out = soft_nms(dets, SuppressionConfig(mode="gaussian", sigma=0.1, score_floor=0.01))
        # exp(-10) decay pushes the overlapped boxes straight below the floor
        assert [d.score for d in out] == [0.9]

    def test_per_class_independence(self):
        dets = _dets([(0, 0, 2, 2)] * 2, [0.9, 0.8], [0, 1])
        out = soft_nms(dets, SuppressionConfig(mode="gaussian"))
        assert sorted(d.score for d in out) == [0.8, 0.9]


class TestValidation:
    def test_detection_invariants(self):
        with pytest.raises(ValueError):
            Detection(box=(2, 0, 1, 1), score=0.5)
        with pytest.raises(ValueError):
            Detection(box=(0, 0, 1, 1), score=1.5)
        with pytest.raises(ValueError):
            Detection(box=(0, 0, 1, 1), score=0.5, class_id=-1)

    def test_config_invariants(self):
        with pytest.raises(ValueError):
            SuppressionConfig(eta0=1.5)
        with pytest.raises(ValueError):
            SuppressionConfig(sigma=0.0)
        with pytest.raises(ValueError):
            SuppressionConfig(mode="cosine")
        with pytest.raises(ValueError):
            SuppressionConfig(score_floor=-0.1)
