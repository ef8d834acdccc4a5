"""Evaluator tests: matching rule, PR arithmetic, AP integration, the
threshold sweep, and agreement with the loop-based staircase oracle."""

import numpy as np
import pytest

from reasdet.dataio import PredictionRecord
from reasdet.metrics import (
    SWEEP_THRESHOLDS,
    EvalReport,
    GroundTruthBox,
    PRCurve,
    average_precision,
    evaluate,
    match_detections,
    pr_curve,
    precision_recall,
)
from reasdet.postprocess import Detection

from oracles import ap_staircase_oracle, evaluate_oracle, greedy_match_oracle
from support import random_eval_instance


def _gt(box, image_id="im0", class_id=0):
    return GroundTruthBox(image_id=image_id, box=box, class_id=class_id)


def _det(box, score):
    return Detection(box=box, score=score, class_id=0)


class TestMatchDetections:
    def test_exact_predictions_all_tp(self):
        gts = [_gt((0, 0, 4, 4)), _gt((10, 10, 14, 14))]
        preds = [_det((0, 0, 4, 4), 0.9), _det((10, 10, 14, 14), 0.8)]
        flags = match_detections(preds, gts, 0.5)
        assert flags == [True, True]

    def test_single_gt_double_prediction(self):
        gts = [_gt((0, 0, 4, 4))]
        preds = [_det((0, 0, 4, 4), 0.6), _det((0.2, 0, 4.2, 4), 0.9)]
        flags = match_detections(preds, gts, 0.5)
        # higher-scored prediction wins the only ground truth
        assert flags == [False, True]

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(30):
            n_gt = int(rng.integers(0, 6))
            n_pred = int(rng.integers(0, 8))
            gts = []
            for _ in range(n_gt):
                x, y = rng.uniform(0, 30, 2)
                w, h = rng.uniform(2, 12, 2)
                gts.append(_gt((x, y, x + w, y + h)))
            preds = []
            for _ in range(n_pred):
                if gts and rng.uniform() < 0.7:
                    gx1, gy1, gx2, gy2 = gts[int(rng.integers(0, n_gt))].box
                    dx, dy = rng.uniform(-3, 3, 2)
                    preds.append(_det((gx1 + dx, gy1 + dy, gx2 + dx, gy2 + dy),
                                      float(rng.uniform(0.1, 1.0))))
                else:
                    x, y = rng.uniform(0, 30, 2)
                    w, h = rng.uniform(2, 12, 2)
                    preds.append(_det((x, y, x + w, y + h), float(rng.uniform(0.1, 1.0))))
            got = match_detections(preds, gts, 0.5)
            want = greedy_match_oracle(
                [p.box for p in preds], [p.score for p in preds], [g.box for g in gts], 0.5
            )
            assert got == want, f"trial {trial}"

    def test_mixed_image_ids_rejected(self):
        gts = [_gt((0, 0, 1, 1), "a"), _gt((0, 0, 1, 1), "b")]
        with pytest.raises(ValueError, match="images"):
            match_detections([], gts, 0.5)


class TestPrecisionRecall:
    def test_direct(self):
        assert precision_recall(3, 1, 1) == (0.75, 0.75)

    def test_degenerate_denominators(self):
        assert precision_recall(0, 0, 5) == (0.0, 0.0)
        assert precision_recall(0, 3, 0) == (0.0, 0.0)

    def test_fuzz_in_unit_interval(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            tp, fp, fn = (int(v) for v in rng.integers(0, 20, 3))
            p, r = precision_recall(tp, fp, fn)
            assert 0.0 <= p <= 1.0 and 0.0 <= r <= 1.0

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            precision_recall(-1, 0, 0)


class TestAveragePrecision:
    def test_perfect_ranking(self):
        curve = pr_curve([True, True, True], total_gt=3)
        assert average_precision(curve) == pytest.approx(1.0)

    def test_fp_before_tp_halves_ap(self):
        # one GT, top-scored prediction misses: envelope precision at full recall is 1/2
        curve = pr_curve([False, True], total_gt=1)
        assert average_precision(curve) == pytest.approx(0.5)

    def test_empty_curve(self):
        assert average_precision(PRCurve(points=[], tp=0, fp=0, fn=3)) == 0.0

    def test_matches_staircase_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = int(rng.integers(1, 12))
            flags = [bool(rng.integers(0, 2)) for _ in range(n)]
            total_gt = sum(flags) + int(rng.integers(0, 4))
            if total_gt == 0:
                continue
            got = average_precision(pr_curve(flags, total_gt))
            want = ap_staircase_oracle(flags, total_gt)
            assert abs(got - want) <= 1e-9

    def test_101point_close_to_all_points(self):
        flags = [True, False, True, True, False, True]
        curve = pr_curve(flags, total_gt=5)
        dense = average_precision(curve, "all_points")
        sampled = average_precision(curve, "101point")
        assert abs(dense - sampled) <= 0.05

    def test_curve_invariants_enforced(self):
        with pytest.raises(ValueError):
            PRCurve(points=[(0.5, 1.0), (0.2, 1.0)], tp=1, fp=0, fn=1)


def _records(preds):
    return [
        PredictionRecord(image_id=i, class_id=c, score=s, box=b) for i, c, s, b in preds
    ]


def _gt_boxes(gts):
    return [GroundTruthBox(image_id=i, box=b, class_id=c) for i, c, b in gts]


class TestEvaluate:
    def test_sweep_uses_exactly_ten_thresholds(self):
        assert SWEEP_THRESHOLDS == tuple((10 + r) / 20 for r in range(10))
        assert len(SWEEP_THRESHOLDS) == 10
        assert SWEEP_THRESHOLDS[0] == 0.5 and SWEEP_THRESHOLDS[-1] == 0.95

    def test_single_class_map_equals_ap(self):
        preds = [("im0", 0, 0.9, (0.0, 0.0, 4.0, 4.0))]
        gts = [("im0", 0, (0.0, 0.0, 4.0, 4.0))]
        report = evaluate(_records(preds), _gt_boxes(gts))
        for t in SWEEP_THRESHOLDS:
            assert report.map_per_threshold[t] == report.ap[0][t]

    def test_perfect_predictions_score_one_everywhere(self):
        gts, preds = [], []
        for i in range(3):
            box = (float(i * 10), 0.0, float(i * 10 + 5), 5.0)
            gts.append((f"im{i}", i % 2, box))
            preds.append((f"im{i}", i % 2, 1.0, box))
        report = evaluate(_records(preds), _gt_boxes(gts))
        assert report.map_50 == pytest.approx(1.0)
        assert report.map_50_95 == pytest.approx(1.0)
        assert report.precision == pytest.approx(1.0)
        assert report.recall == pytest.approx(1.0)

    def test_sweep_mean_identity(self):
        rng = np.random.default_rng(3)
        preds, gts = random_eval_instance(rng)
        report = evaluate(_records(preds), _gt_boxes(gts))
        mean = sum(report.map_per_threshold.values()) / 10
        assert abs(report.map_50_95 - mean) <= 1e-12

    def test_matches_loop_oracle_on_random_instances(self):
        rng = np.random.default_rng(4)
        for trial in range(40):
            preds, gts = random_eval_instance(rng)
            if not gts:
                continue
            report = evaluate(_records(preds), _gt_boxes(gts))
            want_ap, want_map = evaluate_oracle(preds, gts, SWEEP_THRESHOLDS)
            for c in want_ap:
                for t in SWEEP_THRESHOLDS:
                    assert abs(report.ap[c][t] - want_ap[c][t]) <= 1e-9, (trial, c, t)
            for t in SWEEP_THRESHOLDS:
                assert abs(report.map_per_threshold[t] - want_map[t]) <= 1e-9

    def test_ap_non_increasing_in_threshold(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            preds, gts = random_eval_instance(rng, classes=1)
            if not gts:
                continue
            report = evaluate(_records(preds), _gt_boxes(gts))
            values = [report.map_per_threshold[t] for t in SWEEP_THRESHOLDS]
            assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))

    def test_duplicate_lower_scored_tp_never_raises_ap(self):
        box = (0.0, 0.0, 4.0, 4.0)
        preds = [("im0", 0, 0.9, box)]
        gts = [("im0", 0, box)]
        base = evaluate(_records(preds), _gt_boxes(gts)).map_50
        with_dup = evaluate(_records(preds + [("im0", 0, 0.5, box)]), _gt_boxes(gts)).map_50
        assert with_dup <= base + 1e-12

    def test_order_invariance(self):
        rng = np.random.default_rng(6)
        preds, gts = random_eval_instance(rng)
        if not gts:
            preds, gts = random_eval_instance(np.random.default_rng(7))
        forward = evaluate(_records(preds), _gt_boxes(gts))
        perm = np.random.default_rng(8).permutation(len(preds))
        backward = evaluate(_records([preds[i] for i in perm]), _gt_boxes(gts[::-1]))
        for c in forward.ap:
            for t in forward.ap[c]:
                assert forward.ap[c][t] == pytest.approx(backward.ap[c][t], abs=1e-12)

    def test_unknown_prediction_classes_reported(self):
        preds = [("im0", 7, 0.9, (0.0, 0.0, 4.0, 4.0))]
        gts = [("im0", 0, (0.0, 0.0, 4.0, 4.0))]
        report = evaluate(_records(preds), _gt_boxes(gts))
        assert report.ignored_prediction_classes == {7: 1}

    def test_bad_thresholds_rejected(self):
        with pytest.raises(ValueError):
            evaluate([], _gt_boxes([("im0", 0, (0.0, 0.0, 1.0, 1.0))]), thresholds=[0.0])


class TestReportRendering:
    def _report(self):
        preds = [("im0", 0, 0.9, (0.0, 0.0, 4.0, 4.0))]
        gts = [("im0", 0, (0.0, 0.0, 4.0, 4.0))]
        return evaluate(_records(preds), _gt_boxes(gts))

    def test_text_mirrors_dict(self):
        report = self._report()
        text = report.to_text()
        payload = report.to_dict()
        assert f"precision {payload['precision']:.6f}" in text
        assert f"map_50 {payload['map_50']:.6f}" in text
        assert f"map_50_95 {payload['map_50_95']:.6f}" in text
        for key, value in payload["map_per_threshold"].items():
            assert f"map@{key} {value:.6f}" in text

    def test_dict_round_trips_through_json(self):
        import json

        report = self._report()
        assert json.loads(json.dumps(report.to_dict())) == report.to_dict()
