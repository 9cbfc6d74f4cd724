"""JSON Lines detection streams, label files, and utilization reports."""
from __future__ import annotations

import csv
import io
import json
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Union

from .detections import FrameObservation, RecordError
from .geometry import SiteGeometry, UtilizationSample
from .metrics import LabeledFrame, StayRecord
from .tracking import FilterConfig, FilteredFrame, FilterState, PresentSpan

Source = Union[str, Path, IO[str]]

UTILIZATION_CSV = "utilization.csv"
SPANS_CSV = "spans.csv"
SUMMARY_JSON = "summary.json"


class StreamFormatError(ValueError):
    def __init__(self, line: int, message: str, field_name: str | None = None):
        where = f"line {line}" + (f", field {field_name!r}" if field_name else "")
        super().__init__(f"{where}: {message}")
        self.line = line
        self.field_name = field_name


class PipelineError(ValueError):
    """Validation failure raised while streaming, tagged with the frame index."""

    def __init__(self, frame: int, cause: Exception):
        super().__init__(f"frame {frame}: {cause}")
        self.frame = frame
        self.cause = cause


@contextmanager
def _open_text(src: Source, mode: str = "r"):
    if hasattr(src, "read") or hasattr(src, "write"):
        yield src
    elif str(src) == "-":
        yield sys.stdin if "r" in mode else sys.stdout
    else:
        with open(src, mode, newline="" if "w" in mode else None) as fh:
            yield fh


def read_detection_stream(src: Source) -> Iterator[FrameObservation]:
    """Lazily parse one FrameObservation per line; blank lines are skipped."""
    with _open_text(src) as fh:
        prev = None
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obs = FrameObservation.from_json(json.loads(line))
            except json.JSONDecodeError as exc:
                raise StreamFormatError(lineno, f"malformed JSON: {exc.msg}") from exc
            except RecordError as exc:
                raise StreamFormatError(lineno, str(exc), exc.field_name) from exc
            except (TypeError, ValueError) as exc:
                raise StreamFormatError(lineno, str(exc)) from exc
            if prev is not None and obs.frame <= prev:
                raise StreamFormatError(lineno, f"non-monotonic frame {obs.frame} after {prev}", "frame")
            prev = obs.frame
            yield obs


def dump_observation(obs: FrameObservation) -> str:
    return json.dumps(obs.to_json(), separators=(",", ":"))


def write_detection_stream(frames: Iterable[FrameObservation], dst: Source) -> None:
    with _open_text(dst, "w") as fh:
        for obs in frames:
            fh.write(dump_observation(obs))
            fh.write("\n")


def write_json(data, path: Union[str, Path]) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def read_labels(path: Union[str, Path]) -> tuple[list[LabeledFrame], list[StayRecord]]:
    with open(path) as fh:
        data = json.load(fh)
    try:
        frames = [
            LabeledFrame(int(f["frame"]), tuple((b[0], b[1]) for b in f["boxes"]))
            for f in data.get("frames", [])
        ]
        stays = [StayRecord.from_json(s) for s in data.get("stays", [])]
    except (KeyError, TypeError, IndexError) as exc:
        raise ValueError(f"{path}: malformed labels file: {exc!r}") from exc
    for lf in frames:
        for l, r in lf.boxes:
            if r < l:
                raise ValueError(f"{path}: frame {lf.frame} box ({l}, {r}) has right < left")
    return frames, stays


@dataclass
class UtilizationReport:
    lot_ids: tuple[int, ...]
    frames: list[FilteredFrame] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def utilization_rows(self) -> Iterator[tuple]:
        for ff in self.frames:
            for s in ff.utilization:
                yield (ff.evaluated_frame, s.time_s, s.lot_id, s.utilization)

    def span_rows(self) -> Iterator[tuple]:
        for ff in self.frames:
            for p in ff.present_spans:
                yield (ff.evaluated_frame, p.lot_id, p.group_id, p.left, p.right)

    def series(self, lot_id: int) -> list[UtilizationSample]:
        return [s for ff in self.frames for s in ff.utilization if s.lot_id == lot_id]

    def summary(self) -> dict:
        n = len(self.frames)
        means = {}
        for lot in self.lot_ids:
            vals = [s.utilization for s in self.series(lot)]
            means[str(lot)] = sum(vals) / len(vals) if vals else None
        return {
            "config": self.config,
            "lots": list(self.lot_ids),
            "frames_evaluated": n,
            "first_frame": self.frames[0].evaluated_frame if n else None,
            "last_frame": self.frames[-1].evaluated_frame if n else None,
            "present_spans": sum(len(ff.present_spans) for ff in self.frames),
            "mean_utilization": means,
        }


def run_pipeline(
    detections: Iterable[FrameObservation], geometry: SiteGeometry, config: FilterConfig | None = None
) -> UtilizationReport:
    config = config or FilterConfig()
    state = FilterState(config)
    report = UtilizationReport(geometry.lot_ids, [], config.to_json())
    frame = None
    try:
        for obs in detections:
            frame = obs.frame
            report.frames.extend(state.ingest_frame(obs, geometry))
        report.frames.extend(state.flush(geometry))
    except (StreamFormatError, PipelineError):
        raise
    except ValueError as exc:
        raise PipelineError(frame if frame is not None else -1, exc) from exc
    return report


def _csv_text(header: Iterable[str], rows: Iterable[tuple]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_reports(report: UtilizationReport, out_dir: Union[str, Path]) -> dict[str, Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "utilization": out / UTILIZATION_CSV,
            "spans": out / SPANS_CSV,
            "summary": out / SUMMARY_JSON,
        }
        paths["utilization"].write_text(
            _csv_text(("frame", "time_s", "lot_id", "utilization"), report.utilization_rows())
        )
        paths["spans"].write_text(
            _csv_text(("frame", "lot_id", "group_id", "left", "right"), report.span_rows())
        )
        write_json(report.summary(), paths["summary"])
    except OSError as exc:
        raise OSError(f"cannot write reports to {out}: {exc}") from exc
    return paths


def read_reports(out_dir: Union[str, Path]) -> UtilizationReport:
    out = Path(out_dir)
    with open(out / SUMMARY_JSON) as fh:
        summary = json.load(fh)
    util: dict[int, list[UtilizationSample]] = {}
    times: dict[int, float] = {}
    with open(out / UTILIZATION_CSV, newline="") as fh:
        for row in csv.DictReader(fh):
            f = int(row["frame"])
            t = float(row["time_s"])
            times[f] = t
            util.setdefault(f, []).append(UtilizationSample(int(row["lot_id"]), t, float(row["utilization"])))
    spans: dict[int, list[PresentSpan]] = {}
    with open(out / SPANS_CSV, newline="") as fh:
        for row in csv.DictReader(fh):
            f = int(row["frame"])
            lot = row["lot_id"]
            spans.setdefault(f, []).append(
                PresentSpan(int(row["left"]), int(row["right"]), int(row["group_id"]), int(lot) if lot else None)
            )
    frames = [
        FilteredFrame(f, times.get(f, 0.0), tuple(spans.get(f, ())), tuple(util.get(f, ())))
        for f in sorted(set(util) | set(spans))
    ]
    return UtilizationReport(tuple(summary["lots"]), frames, summary.get("config", {}))
