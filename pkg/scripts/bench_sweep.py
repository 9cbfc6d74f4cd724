"""Per-frame filter latency against memory size.

    python3 scripts/bench_sweep.py --memory 5 25 51 101 151 --vehicles 10
"""
from __future__ import annotations

import argparse
import json

from parkfilter.bench import BenchConfig, run_bench
from parkfilter.tracking import odd_memory


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--memory", type=int, nargs="+", default=[5, 25, 51, 101, 151])
    p.add_argument("--vehicles", type=int, default=10)
    p.add_argument("--frames", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true", help="print JSON instead of a table")
    args = p.parse_args()
    rows = [
        run_bench(BenchConfig(memory_frames=odd_memory(n), vehicles=args.vehicles, frames=max(args.frames, 2 * n), seed=args.seed))
        for n in args.memory
    ]
    if args.json:
        print(json.dumps(rows, indent=2))
        return
    print(f"{'memory':>7} {'window dets':>12} {'mean ms':>8} {'p95 ms':>8} {'max ms':>8}")
    for r in rows:
        print(f"{r['memory_frames']:>7} {r['mean_window_detections']:>12.0f} {r['mean_ms']:>8.3f} {r['p95_ms']:>8.3f} {r['max_ms']:>8.3f}")


if __name__ == "__main__":
    main()
