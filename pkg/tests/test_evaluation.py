import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import exhaustive_best_flags, pr_area
from scenehyper.errors import ParseError, ReportError
from scenehyper.evaluation import (
    average_precision,
    class_accuracy,
    match_predictions,
    mean_ap,
    read_prediction_dump,
    write_prediction_dump,
)
from scenehyper.geometry import Box3D, box_iou_matrix


def box(x=0.0, cat=0, score=None, size=1.0):
    return Box3D((x, 0, 0), (size, size, size), cat, score)


def micro_instance(rng, spread=0.15, max_boxes=10):
    """Clustered GTs plus jittered predictions, at most ``max_boxes`` total."""
    ng = int(rng.integers(1, 5))
    npred = int(rng.integers(1, max_boxes + 1 - ng))
    gts = [Box3D(rng.random(3) * spread, 0.2 + rng.random(3) * 0.3, 0) for _ in range(ng)]
    preds = []
    for _ in range(npred):
        g = gts[int(rng.integers(ng))]
        preds.append(Box3D(np.asarray(g.center) + rng.normal(0, 0.08, 3),
                           np.asarray(g.size) * np.exp(rng.normal(0, 0.2, 3)), 0, float(rng.random())))
    preds.sort(key=lambda p: -p.score)
    return preds, gts


def eligibility(preds, gts, thr):
    iou = box_iou_matrix([p.center for p in preds], [p.size for p in preds],
                         [g.center for g in gts], [g.size for g in gts])
    same = np.array([p.category for p in preds])[:, None] == np.array([g.category for g in gts])[None]
    return (iou >= thr) & same


def greedy_vs_oracle(preds, gts, thr=0.25):
    """Returns (greedy AP, oracle AP, greedy_is_optimal)."""
    flags = match_predictions(preds, gts, thr)
    ap = average_precision(flags, [p.score for p in preds], len(gts))
    _, best = exhaustive_best_flags(eligibility(preds, gts, thr))
    oracle_ap = max(pr_area(f, len(gts)) for f in best)
    optimal = tuple(flags) in best and pr_area(flags, len(gts)) == oracle_ap
    return ap, oracle_ap, optimal


class TestMatching:
    def test_single_tp(self):
        # IoU of unit cubes offset by 0.25 is 0.75/1.25 = 0.6
        assert match_predictions([box(0.25, score=1)], [box()], 0.5) == [True]

    def test_second_prediction_is_fp(self):
        assert match_predictions([box(0, score=0.9), box(0.05, score=0.8)], [box()], 0.5) == [True, False]

    def test_wrong_category(self):
        assert match_predictions([box(cat=1, score=1)], [box(cat=0)], 0.25) == [False]

    def test_below_threshold(self):
        assert match_predictions([box(0.8, score=1)], [box()], 0.25) == [False]

    def test_no_gt(self):
        assert match_predictions([box(score=1)], [], 0.25) == [False]

    def test_takes_highest_iou(self):
        gts = [box(0.4), box(0.0)]
        assert match_predictions([box(0.0, score=1), box(0.4, score=0.5)], gts, 0.5) == [True, True]


class TestAveragePrecision:
    @pytest.mark.parametrize("flags,expected", [([True], 1.0), ([False, True], 0.5), ([False, False], 0.0)])
    def test_micro_cases(self, flags, expected):
        scores = list(range(len(flags), 0, -1))
        assert average_precision(flags, scores, 1) == expected

    def test_partial_recall(self):
        assert average_precision([True], [1.0], 2) == 0.5

    def test_no_gt(self):
        assert average_precision([True], [1.0], 0) == 0.0

    def test_orders_by_score(self):
        assert average_precision([True, False], [0.1, 0.9], 1) == 0.5

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.booleans(), min_size=1, max_size=15), st.integers(0, 5))
    def test_matches_pr_area(self, flags, extra):
        num_gt = sum(flags) + extra
        if num_gt == 0:
            return
        scores = list(range(len(flags), 0, -1))
        assert average_precision(flags, scores, num_gt) == pytest.approx(pr_area(flags, num_gt), abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.booleans(), st.integers(-50, 50)), min_size=1, max_size=15,
                    unique_by=lambda t: t[1]), st.integers(1, 4))
    def test_monotone_rescaling(self, items, num_gt):
        flags = [f for f, _ in items]
        scores = np.array([s / 10 for _, s in items])
        num_gt = max(num_gt, sum(flags))
        base = average_precision(flags, scores, num_gt)
        assert 0.0 <= base <= 1.0
        assert average_precision(flags, 3 * scores + 7, num_gt) == base
        assert average_precision(flags, np.exp(scores), num_gt) == base

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.booleans(), min_size=1, max_size=15), st.integers(0, 3))
    def test_trailing_fp_never_helps(self, flags, extra):
        num_gt = max(1, sum(flags) + extra)
        scores = list(range(len(flags), 0, -1))
        assert average_precision(flags + [False], scores + [0], num_gt) <= average_precision(flags, scores, num_gt)


def scene_gts():
    return {"a": [box(0, 0), box(3, 1)], "b": [box(0, 0, size=0.5)]}


def perfect(gts):
    return {s: [Box3D(g.center, g.size, g.category, 1.0) for g in bs] for s, bs in gts.items()}


class TestMeanAP:
    def test_perfect(self):
        gts = scene_gts()
        report = mean_ap(perfect(gts), gts, (0.25, 0.5, 0.9))
        assert all(v == 1.0 for v in report.mean_ap.values())

    def test_empty_predictions(self):
        report = mean_ap({}, scene_gts())
        assert report.mean_ap == {0.25: 0.0, 0.5: 0.0}

    def test_no_gt(self):
        with pytest.raises(ReportError):
            mean_ap({}, {"a": []})

    def test_unknown_scene(self):
        with pytest.raises(ReportError):
            mean_ap({"zzz": [box(score=1)]}, scene_gts())

    def test_matching_is_scene_scoped(self):
        gts = {"a": [box()], "b": [box(5)]}
        preds = {"a": [box(5, score=1)], "b": [box(0, score=1)]}
        assert mean_ap(preds, gts).mean_ap[0.25] == 0.0

    def test_categories_without_gt_excluded(self):
        gts = {"a": [box()]}
        preds = {"a": [box(score=1), box(9, cat=4, score=0.5)]}
        report = mean_ap(preds, gts)
        assert list(report.ap[0.25]) == [0] and report.mean_ap[0.25] == 1.0

    def test_counts(self):
        gts = scene_gts()
        preds = perfect(gts)
        preds["a"].append(box(0.02, 0, 0.3))
        c = mean_ap(preds, gts).counts[0.25][0]
        assert c == {"tp": 2, "fp": 1, "gt": 2}

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_stricter_threshold_never_helps(self, seed):
        rng = np.random.default_rng(seed)
        preds, gts = micro_instance(rng, spread=0.6)
        report = mean_ap({"s": preds}, {"s": gts})
        assert report.mean_ap[0.5] <= report.mean_ap[0.25]

    def test_report_text(self, tmp_path):
        report = mean_ap(perfect(scene_gts()), scene_gts(), config={"run": "x"})
        report.write(tmp_path / "r.txt", tmp_path / "r.json")
        text = (tmp_path / "r.txt").read_text()
        assert "mAP@0.25: 1.000000" in text and "mAP@0.5: 1.000000" in text
        assert "config.run: x" in text
        assert all(": " in line for line in text.splitlines())


class TestGreedyOracle:
    def test_agrees_when_greedy_optimal(self):
        rng = np.random.default_rng(0)
        checked = 0
        while checked < 100:
            preds, gts = micro_instance(rng)
            ap, oracle_ap, optimal = greedy_vs_oracle(preds, gts)
            if optimal:
                assert ap == pytest.approx(oracle_ap, abs=1e-12)
                checked += 1

    def test_greedy_can_be_suboptimal(self):
        # the documented exception: a high-score prediction grabs the GT a
        # later one needed, so greedy reports fewer TPs than the optimum
        gts = [box(0.0), box(0.6)]
        preds = [box(0.3, score=0.9), box(0.05, score=0.5)]
        flags = match_predictions(preds, gts, 0.5)
        count, _ = exhaustive_best_flags(eligibility(preds, gts, 0.5))
        assert sum(flags) == 1 and count == 2


class TestClassAccuracy:
    def test_correct_and_wrong(self):
        gts = {"a": [box(0, 0), box(5, 1)]}
        preds = {"a": [box(0, 0, 0.9), box(5, 0, 0.9)]}
        assert class_accuracy(preds, gts) == 0.5
        assert class_accuracy(preds, gts, categories=[1]) == 0.0

    def test_highest_score_decides(self):
        gts = {"a": [box(0, 0)]}
        preds = {"a": [box(0, 1, 0.4), box(0, 0, 0.8)]}
        assert class_accuracy(preds, gts) == 1.0

    def test_missed_object_is_wrong(self):
        assert class_accuracy({}, {"a": [box()]}) == 0.0

    def test_no_gt(self):
        with pytest.raises(ReportError):
            class_accuracy({}, {"a": [box(cat=0)]}, categories=[3])


class TestDump:
    def test_round_trip(self, tmp_path):
        preds = {"s1": [Box3D((0.123456789, 1e-7, -3), (0.5, 0.25, 2), 3, 0.987654321)],
                 "s2": [box(score=0.5), box(1, 2, 0.25)]}
        write_prediction_dump(preds, tmp_path / "d.txt")
        assert read_prediction_dump(tmp_path / "d.txt") == preds

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1), st.floats(-100, 100), st.floats(1e-3, 10)), min_size=1, max_size=10))
    def test_round_trip_quantized(self, tmp_path_factory, items):
        from scenehyper.data import quantize
        boxes = [Box3D(quantize([c, c / 2, -c]), quantize([s, s, 2 * s]), i % 3, float(quantize(sc)))
                 for i, (sc, c, s) in enumerate(items)]
        path = tmp_path_factory.mktemp("d") / "d.txt"
        write_prediction_dump({"x": boxes}, path)
        assert read_prediction_dump(path) == {"x": boxes}

    @pytest.mark.parametrize("line", [
        "s 0 0.5 0 0 0 1 1",
        "s zero 0.5 0 0 0 1 1 1",
        "s 0 0.5 0 0 inf 1 1 1",
        "s 0 0.5 0 0 0 1 -1 1",
    ])
    def test_malformed(self, tmp_path, line):
        (tmp_path / "d.txt").write_text("s 0 0.5 0 0 0 1 1 1\n" + line + "\n")
        with pytest.raises(ParseError) as info:
            read_prediction_dump(tmp_path / "d.txt")
        assert info.value.line == 2
