import json

import numpy as np
import pytest

from conftest import PERIOD, lots_geometry, make_det, make_features, make_obs
from parkfilter.detections import Detection, RecordError, VehicleFeatures
from parkfilter.geometry import NOT_PARKED, MaskFootprint, Parked, lot_utilization
from parkfilter.matching import MatchThresholds, is_match
from parkfilter.tracking import (
    FilterConfig,
    FilterState,
    StreamOrderError,
    TrackGroup,
    build_groups,
    group_detections,
    group_location,
    infer_presence,
    odd_memory,
    run_filter,
)


def _group(frames, spans=None):
    spans = spans or [(100, 200)] * len(frames)
    return TrackGroup(0, tuple(make_det(f, s) for f, s in zip(frames, spans)))


# -- config ---------------------------------------------------------------------

def test_even_memory_rejected():
    with pytest.raises(ValueError, match="odd"):
        FilterConfig(memory_frames=4)


def test_offset_range():
    assert FilterConfig(memory_frames=5).inference_offset == 2
    with pytest.raises(ValueError):
        FilterConfig(memory_frames=5, inference_offset=3)
    with pytest.raises(ValueError):
        FilterConfig(memory_frames=5, inference_offset=-1)


def test_odd_memory():
    assert odd_memory(100) == 101
    assert odd_memory(25) == 25


# -- presence and location -------------------------------------------------------------

def test_presence_across_occlusion():
    mid = 10
    assert infer_presence(_group([mid - 3, mid + 2]), mid)


def test_presence_single_detection_at_mid():
    assert infer_presence(_group([7]), 7)


def test_no_presence_when_only_before():
    mid = 10
    assert not infer_presence(_group([mid - 4, mid - 1]), mid)


def test_location_plurality():
    g = _group([0, 1, 2, 3], [(100, 200)] * 3 + [(102, 201)])
    assert group_location(g, 2) == (100, 200)


def test_location_single_member():
    assert group_location(_group([4], [(150, 250)]), 4) == (150, 250)


def test_location_tie_goes_to_nearest_mid():
    mid = 5
    g = _group([mid - 1, mid], [(100, 200), (101, 201)])
    assert group_location(g, mid) == (101, 201)


def test_location_tie_then_smaller_left():
    mid = 5
    g = _group([mid - 1, mid + 1], [(101, 201), (100, 200)])
    assert group_location(g, mid) == (100, 200)


def test_location_rounds_half_up():
    g = _group([0, 1, 2], [(99.5, 200.4), (100.2, 199.6), (150.0, 250.0)])
    assert group_location(g, 1) == (100, 200)


def test_location_empty_group():
    with pytest.raises(ValueError):
        group_location(TrackGroup(0, ()), 0)


# -- grouping -------------------------------------------------------------------------------

def test_chain_is_one_group():
    f = make_features()
    a = make_det(0, (100, 200), feats=f)
    b = make_det(1, (125, 200), feats=f)
    c = make_det(2, (150, 200), feats=f)
    th = MatchThresholds()
    assert is_match(a, b, th) and is_match(b, c, th) and not is_match(a, c, th)
    groups = group_detections([a, b, c], th)
    assert len(groups) == 1 and len(groups[0].members) == 3


def test_no_matches_all_singletons():
    dets = [make_det(i, (300 * i, 300 * i + 200), feats=make_features(i, i)) for i in range(4)]
    groups = group_detections(dets, MatchThresholds())
    assert [len(g.members) for g in groups] == [1, 1, 1, 1]


def test_two_cars_disjoint_histograms_two_groups():
    fa, fb = make_features(0, 0, 0.99), make_features(0, 0, 0.99)
    hist_a = np.zeros(24)
    hist_a[:12] = 1 / 12
    hist_b = np.zeros(24)
    hist_b[12:] = 1 / 12
    fa = VehicleFeatures(fa.model_vec, hist_a)
    fb = VehicleFeatures(fb.model_vec, hist_b)
    state = FilterState(FilterConfig(memory_frames=5))
    geom = lots_geometry(1)
    for t in range(4):
        state.ingest_frame(make_obs(t, [make_det(t, (100, 250), 0, fa), make_det(t, (105, 252), 0, fb)]), geom)
    groups = build_groups(state)
    assert len(groups) == 2
    assert all(len(g.members) == 4 for g in groups)


def test_group_order_by_earliest_frame_then_left():
    state = FilterState(FilterConfig(memory_frames=5))
    geom = lots_geometry(2)
    fa, fb, fc = make_features(0, 0), make_features(1, 1), make_features(2, 2)
    state.ingest_frame(make_obs(0, [make_det(0, (400, 500), 1, fb)]), geom)
    state.ingest_frame(make_obs(1, [make_det(1, (50, 200), 0, fa), make_det(1, (420, 520), 1, fc)]), geom)
    groups = state.build_groups()
    firsts = [(g.earliest_frame, min(m.left for m in g.members)) for g in groups]
    assert firsts == [(0, 400), (1, 50), (1, 420)]


# -- streaming -----------------------------------------------------------------------------------

def test_first_emission_when_window_fills():
    state = FilterState(FilterConfig(memory_frames=5))
    geom = lots_geometry(1)
    emitted = []
    for t in range(6):
        out = state.ingest_frame(make_obs(t, [make_det(t, (100, 250))]), geom)
        emitted.append([ff.evaluated_frame for ff in out])
    assert emitted[:4] == [[], [], [], []]
    # the filling frame evaluates mid = 2 and the leading frames before it
    assert emitted[4] == [0, 1, 2]
    assert emitted[5] == [3]


def test_two_frame_gap_closed():
    geom = lots_geometry(1)
    present = {t for t in range(12) if t not in (5, 6)}
    frames = [make_obs(t, [make_det(t, (100, 250))] if t in present else []) for t in range(12)]
    out = list(run_filter(frames, geom, FilterConfig(memory_frames=5)))
    assert [len(ff.present_spans) for ff in out] == [1] * 12
    assert all(ff.present_spans[0].span == (100, 250) for ff in out)


def test_decreasing_frame_rejected():
    state = FilterState(FilterConfig(memory_frames=3))
    geom = lots_geometry(1)
    state.ingest_frame(make_obs(4), geom)
    with pytest.raises(StreamOrderError, match="non-monotonic frame stream"):
        state.ingest_frame(make_obs(3), geom)
    with pytest.raises(StreamOrderError):
        state.ingest_frame(make_obs(4), geom)


def test_inconsistent_time_rejected():
    state = FilterState(FilterConfig(memory_frames=3))
    from parkfilter.detections import FrameObservation
    with pytest.raises(RecordError, match="time_s"):
        state.ingest_frame(FrameObservation(2, 31.0, ()), lots_geometry(1))


def test_flush_after_exactly_n_frames():
    state = FilterState(FilterConfig(memory_frames=5))
    geom = lots_geometry(1)
    for t in range(5):
        state.ingest_frame(make_obs(t), geom)
    assert [ff.evaluated_frame for ff in state.flush(geom)] == [3, 4]


def test_flush_empty_state():
    assert FilterState().flush(lots_geometry(1)) == []


@pytest.mark.parametrize("n,d,length", [(5, 2, 100), (5, 0, 100), (25, 7, 100), (9, 4, 3), (1, 0, 10)])
def test_every_frame_evaluated_once(n, d, length):
    geom = lots_geometry(1)
    frames = [make_obs(t) for t in range(length)]
    out = list(run_filter(frames, geom, FilterConfig(memory_frames=n, inference_offset=d)))
    assert [ff.evaluated_frame for ff in out] == list(range(length))


def test_memory_bound():
    state = FilterState(FilterConfig(memory_frames=7))
    geom = lots_geometry(1)
    for t in range(50):
        state.ingest_frame(make_obs(t, [make_det(t, (100, 250))]), geom)
        assert len(state) <= 7
    assert state.peak_buffered == 7


def test_evaluated_time_follows_period():
    geom = lots_geometry(1)
    out = list(run_filter([make_obs(t) for t in range(8)], geom, FilterConfig(memory_frames=3)))
    assert [ff.evaluated_time for ff in out] == [t * PERIOD for t in range(8)]


def test_admission_rules(geom2):
    state = FilterState(FilterConfig(memory_frames=3, detection_confidence_floor=0.6))
    f = make_features()
    low = make_det(0, (20, 200), 0, f, conf=0.59)
    at_floor = make_det(0, (320, 500), 1, f, conf=0.6)
    road = Detection(0, (10.0, 50.0), 0.9, f, NOT_PARKED)
    masked = Detection(0, (30.0, 250.0), 0.9, make_features(3, 3), None, MaskFootprint.rectangle(30, 250, 120, 180))
    state.ingest_frame(make_obs(0, [low, at_floor, road, masked]), geom2)
    kept = state.buffered_detections()
    assert [d.span for d in kept] == [(320.0, 500.0), (30.0, 250.0)]
    assert kept[1].park_status == Parked(0) and kept[1].mask is None


def test_unknown_lot_rejected(geom2):
    state = FilterState(FilterConfig(memory_frames=3))
    with pytest.raises(RecordError, match="unknown lot"):
        state.ingest_frame(make_obs(0, [make_det(0, (20, 200), lot=9)]), geom2)


def test_pass_through_on_clean_stream(geom2):
    fa, fb = make_features(0, 0), make_features(1, 1)
    frames = []
    for t in range(40):
        dets = []
        if 3 <= t < 30:
            dets.append(make_det(t, (20, 230), 0, fa))
        if t >= 10:
            dets.append(make_det(t, (330, 540), 1, fb))
        frames.append(make_obs(t, dets))
    for n in (1, 5, 11):
        out = list(run_filter(frames, geom2, FilterConfig(memory_frames=n)))
        for obs, ff in zip(frames, out):
            assert sorted(p.span for p in ff.present_spans) == sorted(d.span for d in obs.detections)


def test_group_id_persists_through_stay(geom2):
    fa, fb = make_features(0, 0), make_features(1, 1)
    frames = []
    for t in range(60):
        dets = [make_det(t, (20, 230), 0, fa)] if t < 50 else []
        if 20 <= t < 35:
            dets.append(make_det(t, (330, 540), 1, fb))
        frames.append(make_obs(t, dets))
    out = list(run_filter(frames, geom2, FilterConfig(memory_frames=9)))
    ids_a = {p.group_id for ff in out for p in ff.present_spans if p.lot_id == 0}
    ids_b = {p.group_id for ff in out for p in ff.present_spans if p.lot_id == 1}
    assert len(ids_a) == 1 and len(ids_b) == 1 and ids_a != ids_b


def test_utilization_reported_per_lot(geom2):
    frames = [make_obs(t, [make_det(t, (10, 150), 0)]) for t in range(5)]
    out = list(run_filter(frames, geom2, FilterConfig(memory_frames=3)))
    for ff in out:
        assert [u.lot_id for u in ff.utilization] == [0, 1]
        assert ff.utilization[0].utilization == lot_utilization(geom2.lots[0], [(10, 150)])
        assert ff.utilization[1].utilization == 0.0


# -- independent reference ----------------------------------------------------------------------

def reference_filter(frames, geom, cfg):
    """Rebuild each evaluated frame's window from scratch and group by direct comparison."""
    n, d = cfg.memory_frames, cfg.inference_offset
    lc = n - 1 - d
    base = frames[0].frame
    last = len(frames) - 1
    admitted = [
        [x for x in obs.detections if x.confidence >= cfg.detection_confidence_floor and isinstance(x.park_status, Parked)]
        for obs in frames
    ]
    out = []
    for f in range(len(frames)):
        lo = max(0, f - lc)
        hi = min(last, max(f + d, n - 1))
        window = [x for k in range(lo, hi + 1) for x in admitted[k]]
        spans = []
        for g in group_detections(window, cfg.thresholds):
            if infer_presence(g, base + f):
                spans.append((*group_location(g, base + f), g.lot_id))
        util = [lot_utilization(lot, [(l, r) for l, r, lt in spans if lt == lot.id]) for lot in geom.lots]
        out.append((base + f, spans, util))
    return out


def random_stream(rng, length, n_vehicles=3, start=0):
    geom = lots_geometry(2)
    variants = {}
    for v in range(n_vehicles):
        f = make_features(v, v)
        g = f.model_vec.copy()
        g[v] -= 0.3
        g[(v + 1) % 196] += 0.3
        variants[v] = (f, VehicleFeatures(g, f.color_hist))  # second variant fails the model test
    frames = []
    for t in range(length):
        dets = []
        for v in range(n_vehicles):
            if rng.random() < 0.55:
                lot = v % 2
                x = 20 + 300 * lot + int(rng.integers(0, 3)) * 12
                feats = variants[v][int(rng.random() < 0.15)]
                dets.append(make_det(start + t, (x, x + 200 + int(rng.integers(0, 3))), lot, feats, conf=float(rng.uniform(0.3, 1.0))))
        frames.append(make_obs(start + t, dets))
    return frames, geom


@pytest.mark.parametrize("seed", range(12))
def test_streaming_filter_matches_reference(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.choice([1, 3, 5, 7]))
    d = int(rng.integers(0, n // 2 + 1))
    frames, geom = random_stream(rng, int(rng.integers(1, 40)), start=int(rng.integers(0, 5)))
    cfg = FilterConfig(memory_frames=n, inference_offset=d)
    got = [
        (ff.evaluated_frame, [(p.left, p.right, p.lot_id) for p in ff.present_spans], [u.utilization for u in ff.utilization])
        for ff in run_filter(frames, geom, cfg)
    ]
    assert got == reference_filter(frames, geom, cfg)


# -- checkpoint ---------------------------------------------------------------------------

def test_checkpoint_resume_is_transparent():
    rng = np.random.default_rng(2)
    frames, geom = random_stream(rng, 60)
    cfg = FilterConfig(memory_frames=7, inference_offset=2)

    def collect(ffs):
        return [(ff.evaluated_frame, [(p.span, p.group_id, p.lot_id) for p in ff.present_spans]) for ff in ffs]

    straight = collect(run_filter(frames, geom, cfg))
    state = FilterState(cfg)
    out = []
    for obs in frames[:33]:
        out.extend(state.ingest_frame(obs, geom))
    blob = json.dumps(state.to_json())
    resumed = FilterState.from_json(json.loads(blob))
    for obs in frames[33:]:
        out.extend(resumed.ingest_frame(obs, geom))
    out.extend(resumed.flush(geom))
    assert collect(out) == straight
