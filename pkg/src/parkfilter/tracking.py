"""Memory-based car tracking filter.

The filter keeps the parked detections of the last ``n`` frames. Each time the
window is full it groups detections that are the same vehicle (connected
components of the pairwise match graph), declares a group present at the
evaluated frame ``newest - d`` when the group has a member at or before and a
member at or after that frame, and reports the plurality span of the group.

Pairwise matches are computed once, when a frame arrives, against everything
still in memory. Evicting the oldest frame only drops edges, so every
evaluation is a connected-components pass over cached edges.
"""
from __future__ import annotations

import dataclasses
import logging
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import _kernels
from .detections import HIST_DIM, MODEL_DIM, Detection, FrameObservation, RecordError
from .geometry import Parked, SiteGeometry, UtilizationSample, classify_parked, lot_utilization
from .matching import MatchThresholds, is_match

log = logging.getLogger(__name__)

TIME_TOL = 1e-6


class StreamOrderError(ValueError):
    pass


def odd_memory(n: int) -> int:
    """Smallest odd memory size >= ``n``."""
    if n < 1:
        raise ValueError("memory size must be positive")
    return n if n % 2 else n + 1


@dataclass(frozen=True)
class FilterConfig:
    memory_frames: int = 25
    sample_period: float = 15.0
    thresholds: MatchThresholds = field(default_factory=MatchThresholds)
    inference_offset: Optional[int] = None  # None -> memory_frames // 2
    detection_confidence_floor: float = 0.5

    def __post_init__(self):
        n = self.memory_frames
        if n < 1 or n % 2 == 0:
            raise ValueError(f"memory_frames must be a positive odd integer, got {n}")
        if self.sample_period <= 0:
            raise ValueError("sample_period must be positive")
        d = n // 2 if self.inference_offset is None else self.inference_offset
        if not 0 <= d <= n // 2:
            raise ValueError(f"inference_offset must lie in [0, {n // 2}], got {d}")
        object.__setattr__(self, "inference_offset", d)
        if not 0.0 <= self.detection_confidence_floor <= 1.0:
            raise ValueError("detection_confidence_floor must lie in [0, 1]")

    @property
    def left_context(self) -> int:
        return self.memory_frames - 1 - self.inference_offset

    def to_json(self) -> dict:
        return {
            "memory_frames": self.memory_frames,
            "sample_period": self.sample_period,
            "inference_offset": self.inference_offset,
            "detection_confidence_floor": self.detection_confidence_floor,
            "thresholds": dataclasses.asdict(self.thresholds),
        }

    @classmethod
    def from_json(cls, data: dict) -> "FilterConfig":
        return cls(
            memory_frames=int(data["memory_frames"]),
            sample_period=float(data["sample_period"]),
            thresholds=MatchThresholds(**data.get("thresholds", {})),
            inference_offset=data.get("inference_offset"),
            detection_confidence_floor=float(data.get("detection_confidence_floor", 0.5)),
        )


@dataclass(frozen=True)
class TrackGroup:
    group_id: int
    members: tuple[Detection, ...]

    @property
    def frames(self) -> list[int]:
        return [m.frame for m in self.members]

    @property
    def earliest_frame(self) -> int:
        return min(self.frames)

    @property
    def lot_id(self) -> Optional[int]:
        lots = [m.park_status.lot_id for m in self.members if isinstance(m.park_status, Parked)]
        if not lots:
            return None
        counts = Counter(lots)
        return min(counts, key=lambda k: (-counts[k], k))


@dataclass(frozen=True, slots=True)
class PresentSpan:
    left: int
    right: int
    group_id: int
    lot_id: Optional[int]

    @property
    def span(self) -> tuple[int, int]:
        return (self.left, self.right)


@dataclass(frozen=True, slots=True)
class FilteredFrame:
    evaluated_frame: int
    evaluated_time: float
    present_spans: tuple[PresentSpan, ...]
    utilization: tuple[UtilizationSample, ...]


def round_px(x) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=float) + 0.5).astype(np.int64)


def infer_presence(g: TrackGroup, mid: int) -> bool:
    frames = g.frames
    return min(frames) <= mid <= max(frames)


def _mode_span(lefts: np.ndarray, rights: np.ndarray, frames: np.ndarray, mid: int) -> tuple[int, int]:
    if (lefts == lefts[0]).all() and (rights == rights[0]).all():
        return int(lefts[0]), int(rights[0])
    counts: dict[tuple[int, int], int] = {}
    nearest: dict[tuple[int, int], int] = {}
    for l, r, f in zip(lefts.tolist(), rights.tolist(), frames.tolist()):
        key = (l, r)
        counts[key] = counts.get(key, 0) + 1
        dist = abs(f - mid)
        if dist < nearest.get(key, dist + 1):
            nearest[key] = dist
    return min(counts, key=lambda k: (-counts[k], nearest[k], k[0], k[1]))


def group_location(g: TrackGroup, mid: int) -> tuple[int, int]:
    """Plurality integer span of the group; ties go to the span seen nearest ``mid``."""
    if not g.members:
        raise ValueError("empty group")
    spans = np.array([m.span for m in g.members], dtype=float)
    r = round_px(spans)
    return _mode_span(r[:, 0], r[:, 1], np.array(g.frames), mid)


def group_detections(detections: Sequence[Detection], th: MatchThresholds) -> list[TrackGroup]:
    """Connected components of the pairwise ``is_match`` graph, by direct comparison.

    Quadratic reference path; ``FilterState`` computes the same partition from
    cached edges.
    """
    dets = list(detections)
    parent = list(range(len(dets)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(dets)):
        for j in range(i + 1, len(dets)):
            if is_match(dets[i], dets[j], th):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    buckets: dict[int, list[Detection]] = {}
    for i, det in enumerate(dets):
        buckets.setdefault(find(i), []).append(det)
    groups = [tuple(sorted(m, key=lambda d: (d.frame, d.left, d.right))) for m in buckets.values()]
    groups.sort(key=_group_order_key)
    return [TrackGroup(i, members) for i, members in enumerate(groups)]


def _group_order_key(members: Sequence[Detection]):
    first = min(m.frame for m in members)
    return (first, min(m.left for m in members if m.frame == first), min(m.right for m in members))


@dataclass
class _Slot:
    frame: int
    time_s: float
    uid_start: int
    uid_stop: int
    edge_start: int
    edge_stop: int


class _Columns:
    """Append-only column store indexed by detection uid with a sliding live range."""

    def __init__(self, capacity: int = 256):
        self.base_uid = 0  # uid stored at row `head`
        self.head = 0
        self.tail = 0
        self._alloc(capacity)
        self.objects: deque[Detection] = deque()

    def _alloc(self, cap: int):
        self.frame = np.empty(cap, dtype=np.int64)
        self.span = np.empty((cap, 2), dtype=float)
        self.rspan = np.empty((cap, 2), dtype=np.int64)
        self.lot = np.empty(cap, dtype=np.int64)
        self.label = np.empty(cap, dtype=np.int64)
        self.model = np.empty((cap, MODEL_DIM), dtype=float)
        self.sqrt_hist = np.empty((cap, HIST_DIM), dtype=float)

    def _names(self):
        return ("frame", "span", "rspan", "lot", "label", "model", "sqrt_hist")

    def __len__(self):
        return self.tail - self.head

    def reserve(self, k: int):
        cap = self.frame.shape[0]
        if self.tail + k <= cap:
            return
        live = len(self)
        new_cap = cap if live + k <= cap // 2 else max(2 * cap, 2 * (live + k))
        old = {name: getattr(self, name)[self.head:self.tail].copy() for name in self._names()}
        self._alloc(new_cap)
        for name, arr in old.items():
            getattr(self, name)[:live] = arr
        self.head, self.tail = 0, live

    def append(self, dets: Sequence[Detection]) -> tuple[int, int]:
        k = len(dets)
        self.reserve(k)
        s, e = self.tail, self.tail + k
        if k:
            self.frame[s:e] = [d.frame for d in dets]
            self.span[s:e] = [d.span for d in dets]
            self.rspan[s:e] = np.floor(self.span[s:e] + 0.5)
            self.lot[s:e] = [d.park_status.lot_id for d in dets]
            self.label[s:e] = -1
            self.model[s:e] = [d.features.model_vec for d in dets]
            self.sqrt_hist[s:e] = np.sqrt([d.features.color_hist for d in dets])
            self.objects.extend(dets)
        uid0 = self.base_uid + len(self)
        self.tail = e
        return uid0, uid0 + k

    def drop_until(self, uid: int):
        k = uid - self.base_uid
        for _ in range(k):
            self.objects.popleft()
        self.head += k
        self.base_uid = uid

    def rows(self, uid_start: int, uid_stop: int) -> slice:
        return slice(self.head + uid_start - self.base_uid, self.head + uid_stop - self.base_uid)


class _EdgeBuffer:
    def __init__(self, capacity: int = 1024):
        self.a = np.empty(capacity, dtype=np.int64)
        self.b = np.empty(capacity, dtype=np.int64)
        self.offset = 0  # logical index of row `head`
        self.head = 0
        self.tail = 0

    def append(self, a: np.ndarray, b: np.ndarray) -> tuple[int, int]:
        k = a.size
        cap = self.a.shape[0]
        if self.tail + k > cap:
            live = self.tail - self.head
            new_cap = cap if live + k <= cap // 2 else max(2 * cap, 2 * (live + k))
            na = np.empty(new_cap, dtype=np.int64)
            nb = np.empty(new_cap, dtype=np.int64)
            na[:live] = self.a[self.head:self.tail]
            nb[:live] = self.b[self.head:self.tail]
            self.a, self.b = na, nb
            self.offset += self.head
            self.head, self.tail = 0, live
        start = self.offset + self.tail
        self.a[self.tail:self.tail + k] = a
        self.b[self.tail:self.tail + k] = b
        self.tail += k
        return start, start + k

    def drop_until(self, logical: int):
        self.head = logical - self.offset

    def live(self, logical_start: int) -> tuple[np.ndarray, np.ndarray]:
        s = logical_start - self.offset
        return self.a[s:self.tail], self.b[s:self.tail]


class FilterState:
    """Streaming state of one camera's tracking filter.

    Feed consecutive frames through :meth:`ingest_frame`; call :meth:`flush`
    at end of stream. Single writer; not safe for concurrent mutation.
    """

    def __init__(self, config: FilterConfig | None = None):
        self.config = config or FilterConfig()
        self.next_expected_frame: Optional[int] = None
        self.last_evaluated: Optional[int] = None
        self.peak_buffered = 0
        self._slots: deque[_Slot] = deque()
        self._cols = _Columns()
        self._edges = _EdgeBuffer()
        self._next_group_id = 0
        self._lot_cache = None

    # -- memory ---------------------------------------------------------------

    @property
    def buffered_frames(self) -> list[int]:
        return [s.frame for s in self._slots]

    def buffered_detections(self) -> list[Detection]:
        return list(self._cols.objects)

    def __len__(self):
        return len(self._slots)

    def _evict_oldest(self):
        self._slots.popleft()
        if self._slots:
            head = self._slots[0]
            self._cols.drop_until(head.uid_start)
            self._edges.drop_until(head.edge_start)
        else:
            self._cols.drop_until(self._cols.base_uid + len(self._cols))
            self._edges.drop_until(self._edges.offset + self._edges.tail)

    def _append(self, obs: FrameObservation, dets: Sequence[Detection]):
        cols = self._cols
        uid0, uid1 = cols.append(dets)
        new = cols.rows(uid0, uid1)
        th = self.config.thresholds
        if uid1 > uid0:
            both = slice(cols.head, new.stop)
            a, b = _kernels.match_new(
                cols.span[both], cols.model[both], cols.sqrt_hist[both], new.start - cols.head,
                th.t_c, th.t_b, th.t_l,
            )
            a = a + cols.base_uid
            b = b + cols.base_uid
        else:
            a = b = np.empty(0, dtype=np.int64)
        e0, e1 = self._edges.append(a, b)
        self._slots.append(_Slot(obs.frame, obs.time_s, uid0, uid1, e0, e1))
        self.peak_buffered = max(self.peak_buffered, len(self._slots))

    def _admit(self, obs: FrameObservation, geom: SiteGeometry) -> list[Detection]:
        floor = self.config.detection_confidence_floor
        lot_ids = set(geom.lot_ids)
        kept = []
        for det in obs.detections:
            if det.confidence < floor:
                continue
            status = det.park_status
            if status is None:
                status = classify_parked(det.mask, geom)
            if not isinstance(status, Parked):
                continue
            if status.lot_id not in lot_ids:
                raise RecordError(f"frame {obs.frame}: unknown lot id {status.lot_id}", "lot_id")
            if det.park_status is not status or det.mask is not None:
                det = dataclasses.replace(det, park_status=status, mask=None)
            kept.append(det)
        return kept

    # -- stream ---------------------------------------------------------------

    def ingest_frame(self, obs: FrameObservation, geom: SiteGeometry) -> list[FilteredFrame]:
        """Append one frame; return the evaluations it makes possible.

        During warm-up (fewer than ``n`` frames buffered) nothing is returned.
        The frame that fills the window also evaluates the leading frames
        that precede the first mid-window frame, so every frame of the stream
        is evaluated exactly once between ingest and flush.
        """
        if self.next_expected_frame is not None and obs.frame != self.next_expected_frame:
            raise StreamOrderError(
                f"non-monotonic frame stream: expected frame {self.next_expected_frame}, got {obs.frame}"
            )
        expected_t = obs.frame * self.config.sample_period
        if abs(obs.time_s - expected_t) > TIME_TOL:
            raise RecordError(
                f"frame {obs.frame}: time_s {obs.time_s} inconsistent with sample period "
                f"{self.config.sample_period}",
                "time_s",
            )
        self._append(obs, self._admit(obs, geom))
        self.next_expected_frame = obs.frame + 1

        n, d = self.config.memory_frames, self.config.inference_offset
        if len(self._slots) < n:
            return []
        mid = obs.frame - d
        start = self._slots[0].frame if self.last_evaluated is None else mid
        out = [self._evaluate(f, geom) for f in range(start, mid + 1)]
        self.last_evaluated = mid
        self._evict_oldest()
        return out

    def flush(self, geom: SiteGeometry) -> list[FilteredFrame]:
        """Evaluate the frames after the last evaluated one with a shrinking window."""
        if not self._slots:
            return []
        newest = self._slots[-1].frame
        start = self._slots[0].frame if self.last_evaluated is None else self.last_evaluated + 1
        out = []
        for f in range(start, newest + 1):
            while self._slots and self._slots[0].frame < f - self.config.left_context:
                self._evict_oldest()
            out.append(self._evaluate(f, geom))
            self.last_evaluated = f
        while self._slots:
            self._evict_oldest()
        return out

    # -- evaluation -------------------------------------------------------------

    def _window(self):
        """Live node arrays and (comp, first, last) of the current window."""
        cols = self._cols
        live = slice(cols.head, cols.tail)
        a, b = self._edges.live(self._slots[0].edge_start if self._slots else self._edges.offset)
        keep = b >= cols.base_uid
        frames = cols.frame[live]
        lefts = cols.span[live, 0]
        rights = cols.span[live, 1]
        comp, first, last = _kernels.window_groups(
            len(cols), a[keep] - cols.base_uid, b[keep] - cols.base_uid, frames, lefts, rights
        )
        gids, self._next_group_id = _kernels.carry_labels(comp, first.size, cols.label[live], self._next_group_id)
        return comp, first, last, gids, frames, lefts, rights

    def build_groups(self) -> list[TrackGroup]:
        """Groups of the current window in output order, with carried ids."""
        if not len(self._cols):
            return []
        comp, first, _, gids, *_ = self._window()
        objs = self._cols.objects
        members: list[list[Detection]] = [[] for _ in range(first.size)]
        for i, g in enumerate(comp.tolist()):
            members[g].append(objs[i])
        return [TrackGroup(int(gid), tuple(m)) for gid, m in zip(gids.tolist(), members)]

    def _lot_arrays(self, geom: SiteGeometry):
        if self._lot_cache is None or self._lot_cache[0] is not geom:
            self._lot_cache = (
                geom,
                np.array([lot.id for lot in geom.lots], dtype=np.int64),
                np.array([lot.x_min for lot in geom.lots], dtype=float),
                np.array([lot.x_max for lot in geom.lots], dtype=float),
            )
        return self._lot_cache[1:]

    def _evaluate(self, mid: int, geom: SiteGeometry) -> FilteredFrame:
        cols = self._cols
        t = self._slots[mid - self._slots[0].frame].time_s
        present: list[PresentSpan] = []
        if len(cols):
            live = slice(cols.head, cols.tail)
            a, b = self._edges.live(self._slots[0].edge_start)
            lot_ids, x_min, x_max = self._lot_arrays(geom)
            gid, left, right, lot, util_arr, self._next_group_id = _kernels.evaluate_window(
                a, b, cols.base_uid, cols.frame[live], cols.span[live, 0], cols.span[live, 1],
                cols.rspan[live, 0], cols.rspan[live, 1], cols.lot[live], cols.label[live],
                self._next_group_id, mid, lot_ids, x_min, x_max,
            )
            present = [
                PresentSpan(l, r, g, lt)
                for g, l, r, lt in zip(gid.tolist(), left.tolist(), right.tolist(), lot.tolist())
            ]
            util = [UtilizationSample(i, t, u) for i, u in zip(geom.lot_ids, util_arr.tolist())]
        else:
            util = [UtilizationSample(i, t, 0.0) for i in geom.lot_ids]
        return FilteredFrame(mid, t, tuple(present), tuple(util))

    # -- checkpoint -------------------------------------------------------------

    def to_json(self) -> dict:
        cols = self._cols
        labels = cols.label[cols.head:cols.tail].tolist()
        frames = []
        pos = 0
        for slot in self._slots:
            k = slot.uid_stop - slot.uid_start
            dets = [cols.objects[pos + i] for i in range(k)]
            frames.append({
                "frame": slot.frame,
                "time_s": slot.time_s,
                "detections": [d.to_json() for d in dets],
                "labels": labels[pos:pos + k],
            })
            pos += k
        return {
            "config": self.config.to_json(),
            "next_expected_frame": self.next_expected_frame,
            "last_evaluated": self.last_evaluated,
            "next_group_id": self._next_group_id,
            "frames": frames,
        }

    @classmethod
    def from_json(cls, data: dict) -> "FilterState":
        state = cls(FilterConfig.from_json(data["config"]))
        for rec in data["frames"]:
            obs = FrameObservation.from_json(rec)
            state._append(obs, obs.detections)
            cols = state._cols
            k = len(obs.detections)
            cols.label[cols.tail - k:cols.tail] = rec.get("labels", [-1] * k)
        state.next_expected_frame = data["next_expected_frame"]
        state.last_evaluated = data["last_evaluated"]
        state._next_group_id = int(data["next_group_id"])
        return state


def build_groups(state: FilterState) -> list[TrackGroup]:
    return state.build_groups()


def run_filter(
    frames: Iterable[FrameObservation], geom: SiteGeometry, config: FilterConfig | None = None
) -> Iterable[FilteredFrame]:
    state = FilterState(config)
    for obs in frames:
        yield from state.ingest_frame(obs, geom)
    yield from state.flush(geom)
