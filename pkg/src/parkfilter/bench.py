"""Per-frame latency of the tracking filter on a synthetic full-occupancy stream."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .simgen import LotSpec, ScenarioConfig, simulate
from .tracking import FilterConfig, FilterState

LOT_PITCH = 260
LOT_WIDTH = 250


@dataclass(frozen=True)
class BenchConfig:
    memory_frames: int = 101
    vehicles: int = 10
    frames: int = 400
    seed: int = 0
    sigma_c: float = 0.2
    sigma_h: float = 0.1
    sigma_l: float = 5.0

    def scenario(self) -> ScenarioConfig:
        lots = tuple(LotSpec(i, 20 + LOT_PITCH * i, 20 + LOT_PITCH * i + LOT_WIDTH) for i in range(self.vehicles))
        # arrival_rate 100 puts a stay at frame 0 of every lot; it lasts the whole stream
        return ScenarioConfig(
            lots=lots,
            frame_count=self.frames,
            arrival_rate=100.0,
            stay_min=max(1, self.frames),
            stay_max=max(1, self.frames),
            sigma_c=self.sigma_c,
            sigma_h=self.sigma_h,
            sigma_l=self.sigma_l,
            seed=self.seed,
        )


def _warm_jit() -> None:
    cfg = BenchConfig(memory_frames=3, vehicles=2, frames=8)
    _, frames, geom = simulate(cfg.scenario())
    state = FilterState(FilterConfig(memory_frames=3))
    for obs in frames:
        state.ingest_frame(obs, geom)
    state.flush(geom)


def run_bench(cfg: BenchConfig) -> dict:
    """Time every ``ingest_frame`` call once the window is full.

    The call that first fills the window also evaluates the leading frames
    and is excluded, as are warm-up calls that evaluate nothing.
    """
    if cfg.vehicles < 1 or cfg.frames < 1:
        raise ValueError("bench needs at least one vehicle and one frame")
    _warm_jit()
    _, frames, geom = simulate(cfg.scenario())
    state = FilterState(FilterConfig(memory_frames=cfg.memory_frames))
    lat = []
    window = []
    n = cfg.memory_frames
    for i, obs in enumerate(frames):
        # the window the evaluation sees: n - 1 buffered frames plus this one
        held = len(state.buffered_detections()) + len(obs.detections)
        t0 = time.perf_counter_ns()
        state.ingest_frame(obs, geom)
        dt = time.perf_counter_ns() - t0
        if i >= n:
            lat.append(dt)
            window.append(held)
    state.flush(geom)
    ms = np.asarray(lat, dtype=float) / 1e6
    out = {
        "memory_frames": n,
        "vehicles": cfg.vehicles,
        "frames": cfg.frames,
        "seed": cfg.seed,
        "timed_frames": int(ms.size),
    }
    if ms.size:
        out.update(
            mean_ms=float(ms.mean()),
            median_ms=float(np.median(ms)),
            p95_ms=float(np.percentile(ms, 95)),
            max_ms=float(ms.max()),
            mean_window_detections=float(np.mean(window)),
        )
    return out
