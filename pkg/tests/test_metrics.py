import itertools

import numpy as np
import pytest

from conftest import lots_geometry, make_det, make_obs
from parkfilter.metrics import (
    FrameCounts,
    LabeledFrame,
    MatchedPair,
    MetricError,
    StayEvaluation,
    StayRecord,
    detection_accuracy,
    evaluate_report,
    evaluate_stays,
    match_detections_to_labels,
    spatial_accuracy,
    span_iou,
    time_accuracy,
)
from parkfilter.tracking import FilterConfig, run_filter


def exhaustive_max_tp(outputs, labels):
    """Largest one-to-one assignment with IoU >= 0.5, by enumeration."""
    best = 0
    for k in range(min(len(outputs), len(labels)), 0, -1):
        for outs in itertools.permutations(range(len(outputs)), k):
            for labs in itertools.combinations(range(len(labels)), k):
                if all(span_iou(labels[j], outputs[i]) >= 0.5 for i, j in zip(outs, labs)):
                    return k
    return best


# -- matcher ---------------------------------------------------------------------------------

def test_identical_outputs_all_tp():
    spans = [(0, 100), (200, 320), (400, 450)]
    pairs, c = match_detections_to_labels(spans, spans)
    assert c == FrameCounts(3, 0, 0)
    assert [p.output_span for p in pairs] == spans


def test_one_output_no_labels():
    assert match_detections_to_labels([(0, 10)], [])[1] == FrameCounts(0, 1, 0)


def test_duplicate_outputs_one_label():
    outputs, labels = [(0, 100), (0, 100)], [(0, 100)]
    _, c = match_detections_to_labels(outputs, labels)
    assert c == FrameCounts(1, 1, 0)
    assert exhaustive_max_tp(outputs, labels) == 1


def test_iou_threshold_inclusive():
    # IoU exactly 0.5
    assert match_detections_to_labels([(0, 100)], [(0, 50)])[1].tp == 1
    assert match_detections_to_labels([(0, 100)], [(0, 49)])[1].tp == 0


def test_greedy_prefers_higher_iou():
    pairs, c = match_detections_to_labels([(0, 90), (0, 100)], [(0, 100)])
    assert c == FrameCounts(1, 1, 0)
    assert pairs[0].output_span == (0, 100)


def test_matcher_invariants_random():
    rng = np.random.default_rng(9)
    for _ in range(300):
        def spans(k):
            out = []
            for _ in range(k):
                l = int(rng.integers(0, 300))
                out.append((l, l + int(rng.integers(1, 120))))
            return out
        outputs, labels = spans(int(rng.integers(0, 5))), spans(int(rng.integers(0, 5)))
        pairs, c = match_detections_to_labels(outputs, labels)
        assert c.tp + c.fn == len(labels) and c.tp + c.fp == len(outputs)
        assert all(span_iou(p.true_span, p.output_span) >= 0.5 for p in pairs)
        assert len({p.true_span for p in pairs}) <= c.tp <= exhaustive_max_tp(outputs, labels)


# -- detection accuracy ------------------------------------------------------------------------

def test_detection_accuracy_single_frame():
    assert abs(detection_accuracy([FrameCounts(9, 1, 0)]) - 0.9) <= 1e-12


def test_detection_accuracy_micro_average():
    assert abs(detection_accuracy([FrameCounts(2, 0, 0), FrameCounts(1, 1, 1)]) - 0.6) <= 1e-12


def test_detection_accuracy_zero_denominator():
    with pytest.raises(MetricError, match="no labeled or detected vehicles"):
        detection_accuracy([FrameCounts(0, 0, 0)])


def test_negative_counts_rejected():
    with pytest.raises(MetricError):
        FrameCounts(-1, 0, 0)


# -- spatial accuracy ----------------------------------------------------------------------------

def test_spatial_identical():
    assert spatial_accuracy([MatchedPair((100, 200), (100, 200))]) == 1.0


def test_spatial_one_third():
    assert abs(spatial_accuracy([MatchedPair((100, 200), (150, 250))]) - 1 / 3) <= 1e-12


def test_spatial_mean_two_thirds():
    pairs = [MatchedPair((100, 200), (100, 200)), MatchedPair((100, 200), (150, 250))]
    assert abs(spatial_accuracy(pairs) - 2 / 3) <= 1e-12


def test_spatial_disjoint_clamped():
    assert spatial_accuracy([MatchedPair((0, 10), (20, 30))]) == 0.0


def test_spatial_empty():
    with pytest.raises(MetricError):
        spatial_accuracy([])


# -- time accuracy ------------------------------------------------------------------------

def test_time_accuracy_single():
    assert abs(time_accuracy([StayEvaluation(0, 90, 100)]) - 0.9) <= 1e-12


def test_time_accuracy_sum_then_divide():
    assert abs(time_accuracy([StayEvaluation(0, 60, 100), StayEvaluation(1, 30, 50)]) - 0.6) <= 1e-12


def test_time_accuracy_zero():
    with pytest.raises(MetricError):
        time_accuracy([])


def test_stay_validation():
    with pytest.raises(MetricError, match="exit before enter"):
        StayRecord(0, 0, 10, 9, (0, 1))
    assert StayRecord(0, 0, 10, 10, (0, 1)).frames == 1


# -- evaluate_stays ---------------------------------------------------------------------------

def _stream(length, present, span=(20, 230)):
    return [make_obs(t, [make_det(t, span, 0)] if t in present else []) for t in range(length)]


def test_clean_stay_fully_detected():
    geom = lots_geometry(1)
    frames = _stream(60, set(range(10, 50)))
    out = list(run_filter(frames, geom, FilterConfig(memory_frames=5)))
    ev = evaluate_stays(out, [StayRecord(0, 0, 10, 49, (20, 230))], geom)
    assert ev == [StayEvaluation(0, 40, 40)]


def test_three_frame_gap_closed_with_offset_five():
    geom = lots_geometry(1)
    rng = np.random.default_rng(1)
    present = set(range(10, 50)) - {25, 26, 27}
    frames = []
    for t in range(60):
        dets = []
        if t in present:
            l = 20 + int(rng.integers(-3, 4))
            dets.append(make_det(t, (l, l + 210 + int(rng.integers(-3, 4))), 0))
        frames.append(make_obs(t, dets))
    out = list(run_filter(frames, geom, FilterConfig(memory_frames=11, inference_offset=5)))
    ev = evaluate_stays(out, [StayRecord(0, 0, 10, 49, (20, 230))], geom)
    assert ev[0].f_output == ev[0].f_true == 40


def test_empty_filtered_output():
    assert evaluate_stays([], [StayRecord(0, 0, 0, 9, (0, 100))]) == [StayEvaluation(0, 0, 10)]


def test_wrong_lot_not_counted():
    geom = lots_geometry(2)
    frames = _stream(10, set(range(10)))
    out = list(run_filter(frames, geom, FilterConfig(memory_frames=3)))
    assert evaluate_stays(out, [StayRecord(0, 1, 0, 9, (20, 230))], geom)[0].f_output == 0


def test_stay_outside_range_lists_vehicles():
    out = list(run_filter(_stream(10, set()), lots_geometry(1), FilterConfig(memory_frames=3)))
    with pytest.raises(MetricError, match=r"vehicles \[7\]"):
        evaluate_stays(out, [StayRecord(3, 0, 0, 5, (0, 1)), StayRecord(7, 0, 5, 12, (0, 1))])


def test_unknown_stay_lot():
    out = list(run_filter(_stream(10, set()), lots_geometry(1), FilterConfig(memory_frames=3)))
    with pytest.raises(MetricError, match="unknown lots"):
        evaluate_stays(out, [StayRecord(0, 4, 0, 5, (0, 1))], lots_geometry(1))


def test_evaluate_report_counts():
    geom = lots_geometry(1)
    frames = _stream(20, set(range(5, 15)))
    out = list(run_filter(frames, geom, FilterConfig(memory_frames=3)))
    labeled = [LabeledFrame(t, ((20.0, 230.0),) if 5 <= t < 15 else ()) for t in range(20)]
    rep = evaluate_report(out, labeled, [StayRecord(0, 0, 5, 14, (20, 230))], geom)
    assert rep["detection_accuracy"] == rep["spatial_accuracy"] == rep["time_accuracy"] == 1.0
    assert rep["counts"]["tp"] == 10 and rep["counts"]["f_true"] == 10


def test_evaluate_report_missing_frame():
    out = list(run_filter(_stream(5, set()), lots_geometry(1), FilterConfig(memory_frames=3)))
    with pytest.raises(MetricError, match="not in filtered output"):
        evaluate_report(out, [LabeledFrame(9, ())], [])


def test_evaluate_report_undefined_is_none():
    out = list(run_filter(_stream(5, set()), lots_geometry(1), FilterConfig(memory_frames=3)))
    rep = evaluate_report(out, [LabeledFrame(0, ())], [])
    assert rep["detection_accuracy"] is None and rep["spatial_accuracy"] is None and rep["time_accuracy"] is None
