"""Detection, spatial and time accuracy of filtered output against labels."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .geometry import SiteGeometry

Span = tuple[float, float]

TP_IOU = 0.5


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledFrame:
    frame: int
    boxes: tuple[Span, ...]


@dataclass(frozen=True, slots=True)
class FrameCounts:
    tp: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise MetricError("counts must be non-negative")


@dataclass(frozen=True, slots=True)
class MatchedPair:
    true_span: Span
    output_span: Span


@dataclass(frozen=True, slots=True)
class StayRecord:
    vehicle_id: int
    lot_id: int
    enter_frame: int
    exit_frame: int
    span: Span

    def __post_init__(self):
        if self.exit_frame < self.enter_frame:
            raise MetricError(f"vehicle {self.vehicle_id}: exit before enter")

    @property
    def frames(self) -> int:
        return self.exit_frame - self.enter_frame + 1

    def covers(self, frame: int) -> bool:
        return self.enter_frame <= frame <= self.exit_frame

    def to_json(self) -> dict:
        return {
            "vehicle_id": self.vehicle_id,
            "lot_id": self.lot_id,
            "enter_frame": self.enter_frame,
            "exit_frame": self.exit_frame,
            "span": list(self.span),
        }

    @classmethod
    def from_json(cls, d: dict) -> "StayRecord":
        return cls(
            int(d["vehicle_id"]), int(d["lot_id"]), int(d["enter_frame"]), int(d["exit_frame"]),
            (d["span"][0], d["span"][1]),
        )


@dataclass(frozen=True)
class StayEvaluation:
    vehicle_id: int
    f_output: int
    f_true: int


def span_iou(a: Span, b: Span) -> float:
    """Horizontal intersection over union of two ordered spans."""
    union = max(a[1], b[1]) - min(a[0], b[0])
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if union <= 0:
        # both zero-width
        return 1.0 if tuple(a) == tuple(b) else 0.0
    return max(0.0, inter) / union


def match_detections_to_labels(
    outputs: Sequence[Span], labels: Sequence[Span]
) -> tuple[list[MatchedPair], FrameCounts]:
    """Greedy one-to-one matching by descending IoU; a pair needs IoU >= 0.5."""
    candidates = []
    for i, o in enumerate(outputs):
        for j, lab in enumerate(labels):
            iou = span_iou(lab, o)
            if iou >= TP_IOU:
                candidates.append((-iou, i, j))
    candidates.sort()
    used_o, used_l = set(), set()
    pairs = []
    for _, i, j in candidates:
        if i in used_o or j in used_l:
            continue
        used_o.add(i)
        used_l.add(j)
        pairs.append((j, MatchedPair(tuple(labels[j]), tuple(outputs[i]))))
    pairs.sort(key=lambda p: p[0])
    tp = len(pairs)
    return [p for _, p in pairs], FrameCounts(tp, len(outputs) - tp, len(labels) - tp)


def detection_accuracy(per_frame: Iterable[FrameCounts]) -> float:
    tp = fp = fn = 0
    for c in per_frame:
        tp += c.tp
        fp += c.fp
        fn += c.fn
    denom = tp + fp + fn
    if denom == 0:
        raise MetricError("no labeled or detected vehicles")
    return tp / denom


def spatial_accuracy(pairs: Sequence[MatchedPair]) -> float:
    if not pairs:
        raise MetricError("spatial accuracy needs at least one matched pair")
    total = 0.0
    for p in pairs:
        (lt, rt), (lo, ro) = p.true_span, p.output_span
        union = max(rt, ro) - min(lt, lo)
        if union <= 0:
            total += 1.0 if p.true_span == p.output_span else 0.0
        else:
            total += max(0.0, (min(rt, ro) - max(lt, lo)) / union)
    return total / len(pairs)


def time_accuracy(evals: Iterable[StayEvaluation]) -> float:
    out = true = 0
    for e in evals:
        out += e.f_output
        true += e.f_true
    if true == 0:
        raise MetricError("no labeled stay frames")
    return out / true


def evaluate_stays(filtered, truth: Sequence[StayRecord], geom: Optional[SiteGeometry] = None) -> list[StayEvaluation]:
    """Frames of each true stay at which a present span in the stay's lot matches it.

    ``filtered`` is a sequence of FilteredFrame-like objects exposing
    ``evaluated_frame`` and ``present_spans`` (items with ``span`` and ``lot_id``).
    """
    frames = {f.evaluated_frame: f for f in filtered}
    if geom is not None:
        known = set(geom.lot_ids)
        bad = sorted({s.lot_id for s in truth if s.lot_id not in known})
        if bad:
            raise MetricError(f"stays reference unknown lots {bad}")
    if truth and frames:
        lo, hi = min(frames), max(frames)
        outside = [s.vehicle_id for s in truth if s.enter_frame < lo or s.exit_frame > hi]
        if outside:
            raise MetricError(f"stays outside filtered range [{lo}, {hi}]: vehicles {outside}")
    evals = []
    for stay in truth:
        hit = 0
        for t in range(stay.enter_frame, stay.exit_frame + 1):
            ff = frames.get(t)
            if ff is None:
                continue
            if any(
                p.lot_id == stay.lot_id and span_iou(stay.span, p.span) >= TP_IOU
                for p in ff.present_spans
            ):
                hit += 1
        evals.append(StayEvaluation(stay.vehicle_id, hit, stay.frames))
    return evals


def frame_counts(filtered, labeled: Sequence[LabeledFrame]) -> tuple[list[FrameCounts], list[MatchedPair]]:
    frames = {f.evaluated_frame: f for f in filtered}
    missing = [lf.frame for lf in labeled if lf.frame not in frames]
    if missing:
        raise MetricError(f"labeled frames not in filtered output: {missing[:10]}")
    counts, pairs = [], []
    for lf in labeled:
        outputs = [p.span for p in frames[lf.frame].present_spans]
        fp, c = match_detections_to_labels(outputs, lf.boxes)
        counts.append(c)
        pairs.extend(fp)
    return counts, pairs


def evaluate_report(filtered, labeled: Sequence[LabeledFrame], stays: Sequence[StayRecord], geom=None) -> dict:
    """All three accuracies plus raw counts; undefined accuracies are ``None``."""
    filtered = list(filtered)
    counts, pairs = frame_counts(filtered, labeled)
    evals = evaluate_stays(filtered, stays, geom)
    tp = sum(c.tp for c in counts)
    fp = sum(c.fp for c in counts)
    fn = sum(c.fn for c in counts)
    f_out = sum(e.f_output for e in evals)
    f_true = sum(e.f_true for e in evals)
    return {
        "detection_accuracy": detection_accuracy(counts) if tp + fp + fn else None,
        "spatial_accuracy": spatial_accuracy(pairs) if pairs else None,
        "time_accuracy": time_accuracy(evals) if f_true else None,
        "counts": {
            "labeled_frames": len(labeled),
            "tp": tp,
            "fp": fp,
            "fn": fn,
            "matched_pairs": len(pairs),
            "stays": len(evals),
            "f_output": f_out,
            "f_true": f_true,
        },
    }
