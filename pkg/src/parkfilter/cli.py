"""Command line entry point: simulate, filter, metrics, bench.

Exit codes: 0 success, 1 input validation failure, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bench import BenchConfig, run_bench
from .geometry import load_geometry
from .matching import MatchThresholds
from .metrics import evaluate_report
from .simgen import ScenarioConfig, simulate
from .streamio import read_detection_stream, read_labels, read_reports, run_pipeline, write_detection_stream, write_json, write_reports
from .tracking import FilterConfig, odd_memory

log = logging.getLogger("parkfilter")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_RUNTIME = 2


class InputError(Exception):
    """Bad command line input; maps to exit code 1."""


def _memory(n: int) -> int:
    try:
        m = odd_memory(n)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if m != n:
        log.warning("memory size %d is even; using %d", n, m)
    return m


def _read_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed JSON: {exc.msg} (line {exc.lineno})") from exc


def _geometry(path: str):
    try:
        return load_geometry(path)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed JSON: {exc.msg}") from exc


def cmd_filter(args) -> int:
    geom = _geometry(args.geometry)
    if args.detections != "-" and not Path(args.detections).is_file():
        raise InputError(f"cannot read {args.detections}: no such file")
    try:
        cfg = FilterConfig(
            memory_frames=_memory(args.memory),
            sample_period=args.period,
            thresholds=MatchThresholds(args.tc, args.tb, args.tl),
            inference_offset=args.offset,
            detection_confidence_floor=args.confidence,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    report = run_pipeline(read_detection_stream(args.detections), geom, cfg)
    write_reports(report, args.out)
    log.info("evaluated %d frames into %s", len(report.frames), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    data = _read_json(args.config) if args.config else {}
    if not isinstance(data, dict):
        raise InputError("scenario config must be a JSON object")
    if args.seed is not None:
        data["seed"] = args.seed
    cfg = ScenarioConfig.from_json(data)
    truth, frames, geom = simulate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_detection_stream(frames, out / "detections.jsonl")
    write_json(truth.labels_json(), out / "labels.json")
    write_json({"config": cfg.to_json(), **truth.to_json()}, out / "truth.json")
    write_json(geom.to_json(), out / "geometry.json")
    log.info("simulated %d frames, %d stays into %s", cfg.frame_count, len(truth.stays), out)
    return EXIT_OK


def cmd_metrics(args) -> int:
    report_dir = Path(args.report)
    if not report_dir.is_dir():
        raise InputError(f"report directory {report_dir} does not exist")
    try:
        report = read_reports(report_dir)
        labeled, stays = read_labels(args.labels)
    except OSError as exc:
        raise InputError(f"cannot read input: {exc}") from exc
    except (KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"malformed input: {exc}") from exc
    geom = _geometry(args.geometry) if args.geometry else None
    result = evaluate_report(report.frames, labeled, stays, geom)
    write_json(result, args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.vehicles < 1 or args.frames < 1:
        raise InputError("bench needs --vehicles >= 1 and --frames >= 1")
    cfg = BenchConfig(memory_frames=_memory(args.memory), vehicles=args.vehicles, frames=args.frames, seed=args.seed)
    stats = run_bench(cfg)
    text = json.dumps(stats, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parkfilter", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("filter", help="run the tracking filter over a detection stream")
    f.add_argument("--detections", required=True, help="JSON Lines file, or - for stdin")
    f.add_argument("--geometry", required=True)
    f.add_argument("--memory", type=int, default=25)
    f.add_argument("--period", type=float, default=15.0, help="seconds between frames")
    f.add_argument("--offset", type=int, default=None, help="evaluated frame offset from the newest")
    f.add_argument("--tc", type=float, default=0.5)
    f.add_argument("--tb", type=float, default=0.3)
    f.add_argument("--tl", type=float, default=40.0)
    f.add_argument("--confidence", type=float, default=0.5)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_filter)

    s = sub.add_parser("simulate", help="generate a scenario with ground truth")
    s.add_argument("--config", default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("metrics", help="score a filter report against labels")
    m.add_argument("--report", required=True)
    m.add_argument("--labels", required=True)
    m.add_argument("--geometry", default=None)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_metrics)

    b = sub.add_parser("bench", help="per-frame filter latency on a full-occupancy stream")
    b.add_argument("--memory", type=int, default=101)
    b.add_argument("--vehicles", type=int, default=10)
    b.add_argument("--frames", type=int, default=400)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; those are input failures here
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (InputError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
