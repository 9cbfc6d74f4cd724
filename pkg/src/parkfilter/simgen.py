"""Seeded synthetic parking scenarios with known ground truth.

Noise follows three failure modes: occlusion (contiguous bursts of missing
detections), independent misses, and false detections with unrelated
features. Feature perturbations are bounded so that any two surviving
detections of one vehicle still match under the configured thresholds.
"""
from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .detections import HIST_DIM, MODEL_DIM, Detection, FrameObservation, VehicleFeatures
from .geometry import MaskFootprint, LotRegion, Parked, SiteGeometry, lot_utilization, rectangle
from .matching import MatchThresholds, histogram_distance, model_distance
from .metrics import LabeledFrame, StayRecord

EPS = 1e-9
CLEAN_CONFIDENCE = 0.9


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class LotSpec:
    id: int
    x_min: int
    x_max: int


def _default_lots() -> tuple[LotSpec, ...]:
    return tuple(LotSpec(i, 20 + 260 * i, 270 + 260 * i) for i in range(4))


@dataclass(frozen=True)
class ScenarioConfig:
    lots: tuple[LotSpec, ...] = field(default_factory=_default_lots)
    frame_count: int = 2000
    sample_period: float = 15.0
    arrival_rate: float = 2.0  # stays per lot per 100 vacant frames
    stay_min: int = 40
    stay_max: int = 200
    p_drop: float = 0.0
    burst_rate: float = 0.0  # occlusion bursts per 100 frames of a stay
    burst_max_len: int = 0
    fp_rate: float = 0.0  # false detections per frame
    sigma_c: float = 0.0
    sigma_h: float = 0.0
    sigma_l: float = 0.0
    vehicle_width_min: int = 150
    vehicle_width_max: int = 230
    protect_stay_edges: bool = True  # bursts never hide a stay's first/last frame
    emit_masks: bool = False  # masks instead of precomputed lot ids
    thresholds: MatchThresholds = field(default_factory=MatchThresholds)
    seed: int = 0
    image_height: int = 720
    lot_band: tuple[int, int] = (400, 520)
    road_band: tuple[int, int] = (540, 700)

    def __post_init__(self):
        for name in ("p_drop", "fp_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ScenarioError(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.arrival_rate <= 100.0:
            raise ScenarioError("arrival_rate must lie in [0, 100]")
        if not 0.0 <= self.burst_rate <= 100.0:
            raise ScenarioError("burst_rate must lie in [0, 100]")
        if self.burst_max_len < 0:
            raise ScenarioError("burst_max_len must be >= 0")
        if not 1 <= self.stay_min <= self.stay_max:
            raise ScenarioError("need 1 <= stay_min <= stay_max")
        if self.frame_count < 0:
            raise ScenarioError("frame_count must be >= 0")
        if min(self.sigma_c, self.sigma_h, self.sigma_l) < 0:
            raise ScenarioError("noise scales must be non-negative")
        if not 1 <= self.vehicle_width_min <= self.vehicle_width_max:
            raise ScenarioError("need 1 <= vehicle_width_min <= vehicle_width_max")
        lots = tuple(l if isinstance(l, LotSpec) else LotSpec(*l) for l in self.lots)
        object.__setattr__(self, "lots", lots)

    @property
    def image_width(self) -> int:
        return max((l.x_max for l in self.lots), default=0) + 20

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["lots"] = [dataclasses.asdict(l) for l in self.lots]
        d["lot_band"] = list(self.lot_band)
        d["road_band"] = list(self.road_band)
        return d

    @classmethod
    def from_json(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ScenarioError(f"unknown scenario fields: {sorted(unknown)}")
        kw = dict(data)
        if "lots" in kw:
            kw["lots"] = tuple(
                LotSpec(int(l["id"]), int(l["x_min"]), int(l["x_max"])) if isinstance(l, dict) else LotSpec(*l)
                for l in kw["lots"]
            )
        if "thresholds" in kw:
            kw["thresholds"] = MatchThresholds(**kw["thresholds"])
        for key in ("lot_band", "road_band"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)


@dataclass(frozen=True)
class ScenarioTruth:
    stays: tuple[StayRecord, ...]
    vehicles: dict[int, VehicleFeatures]
    frame_count: int
    sample_period: float

    def present(self, frame: int) -> list[StayRecord]:
        return [s for s in self.stays if s.covers(frame)]

    def labeled_frames(self) -> list[LabeledFrame]:
        boxes: dict[int, list] = {t: [] for t in range(self.frame_count)}
        for s in sorted(self.stays, key=lambda s: (s.lot_id, s.enter_frame)):
            for t in range(s.enter_frame, s.exit_frame + 1):
                boxes[t].append(s.span)
        return [LabeledFrame(t, tuple(sorted(b))) for t, b in boxes.items()]

    def utilization(self, geom: SiteGeometry) -> dict[int, list[float]]:
        """True per-lot utilization at every frame."""
        by_lot: dict[int, list[list]] = {lot.id: [[] for _ in range(self.frame_count)] for lot in geom.lots}
        for s in self.stays:
            for t in range(s.enter_frame, s.exit_frame + 1):
                by_lot[s.lot_id][t].append(s.span)
        return {
            lot.id: [lot_utilization(lot, spans) for spans in by_lot[lot.id]] for lot in geom.lots
        }

    def labels_json(self) -> dict:
        return {
            "frames": [{"frame": lf.frame, "boxes": [list(b) for b in lf.boxes]} for lf in self.labeled_frames()],
            "stays": [s.to_json() for s in self.stays],
        }

    def to_json(self) -> dict:
        return {
            "frame_count": self.frame_count,
            "sample_period": self.sample_period,
            "stays": [s.to_json() for s in self.stays],
            "vehicles": [
                {
                    "vehicle_id": vid,
                    "model_vec": f.model_vec.tolist(),
                    "color_hist": f.color_hist.tolist(),
                }
                for vid, f in sorted(self.vehicles.items())
            ],
        }


def scenario_geometry(cfg: ScenarioConfig) -> SiteGeometry:
    y0, y1 = cfg.lot_band
    r0, r1 = cfg.road_band
    return SiteGeometry(
        image_width=cfg.image_width,
        image_height=cfg.image_height,
        lots=tuple(LotRegion(l.id, rectangle(l.x_min, y0, l.x_max, y1)) for l in cfg.lots),
        road_areas=(rectangle(0, r0, cfg.image_width, r1),),
        road_fraction_threshold=0.5,
    )


def _rngs(seed: int):
    ss = np.random.SeedSequence(seed)
    stays, feats, noise = ss.spawn(3)
    return np.random.default_rng(stays), np.random.default_rng(feats), np.random.default_rng(noise)


def _base_features(rng: np.random.Generator, cls: int, bin_: int) -> VehicleFeatures:
    a = rng.uniform(0.8, 0.95)
    model = (1.0 - a) * rng.dirichlet(np.full(MODEL_DIM - 1, 20.0))
    model = np.insert(model, cls, a)
    h = rng.uniform(0.65, 0.85)
    hist = (1.0 - h) * rng.dirichlet(np.full(HIST_DIM - 1, 20.0))
    hist = np.insert(hist, bin_, h)
    hist /= hist.sum()
    return VehicleFeatures(np.clip(model, EPS, 1 - EPS), hist)


def _separated(f: VehicleFeatures, g: VehicleFeatures, cfg: ScenarioConfig) -> bool:
    th = cfg.thresholds
    return (
        model_distance(f.model_vec, g.model_vec) > 2 * cfg.sigma_c + th.t_c
        or histogram_distance(f.color_hist, g.color_hist) > th.t_b + 2 * cfg.sigma_h
    )


def _sample_stays(cfg: ScenarioConfig, rng: np.random.Generator):
    raw = []
    p = cfg.arrival_rate / 100.0
    for lot in cfg.lots:
        width = lot.x_max - lot.x_min
        if width < cfg.vehicle_width_min:
            raise ScenarioError(f"lot {lot.id} is too narrow for any vehicle ({width} px)")
        if p == 0.0:
            continue
        t = 0
        while True:
            t += int(rng.geometric(p)) - 1
            if t >= cfg.frame_count:
                break
            length = int(rng.integers(cfg.stay_min, cfg.stay_max + 1))
            exit_ = min(t + length - 1, cfg.frame_count - 1)
            w = int(rng.integers(cfg.vehicle_width_min, min(cfg.vehicle_width_max, width) + 1))
            left = lot.x_min + int(rng.integers(0, width - w + 1))
            raw.append((t, lot.id, exit_, left, left + w))
            t = exit_ + 1
    raw.sort()
    return [StayRecord(i, lot, enter, exit_, (left, right)) for i, (enter, lot, exit_, left, right) in enumerate(raw)]


def _assign_features(cfg: ScenarioConfig, n: int, rng: np.random.Generator) -> dict[int, VehicleFeatures]:
    classes = rng.permutation(MODEL_DIM)
    bins = rng.permutation(HIST_DIM)
    out: dict[int, VehicleFeatures] = {}
    for v in range(n):
        cls = int(classes[v % MODEL_DIM])
        for attempt in range(50):
            bin_ = int(bins[(v // MODEL_DIM + attempt) % HIST_DIM])
            f = _base_features(rng, cls, bin_)
            if all(_separated(f, g, cfg) for g in out.values()):
                out[v] = f
                break
        else:
            raise ScenarioError(f"could not draw separated features for vehicle {v}")
    return out


def _mask_for(cfg: ScenarioConfig, left: float, right: float) -> MaskFootprint:
    y0, y1 = cfg.lot_band
    x0 = max(0, int(math.floor(left)))
    x1 = min(cfg.image_width, max(x0 + 1, int(math.floor(right))))
    return MaskFootprint.rectangle(x0, x1, y0 + 10, y1 - 10)


@functools.lru_cache(maxsize=None)
def _parked(lot_id: int) -> Parked:
    return Parked(lot_id)


def _detection(cfg: ScenarioConfig, frame: int, span, conf: float, feats: VehicleFeatures, lot_id: int) -> Detection:
    if cfg.emit_masks:
        return Detection(frame, span, conf, feats, None, _mask_for(cfg, *span))
    return Detection(frame, span, conf, feats, _parked(lot_id))


def generate_scenario(cfg: ScenarioConfig) -> tuple[ScenarioTruth, list[FrameObservation]]:
    """Sample ground-truth stays and the noise-free detection stream."""
    rng_stays, rng_feats, _ = _rngs(cfg.seed)
    stays = _sample_stays(cfg, rng_stays)
    vehicles = _assign_features(cfg, len(stays), rng_feats)
    per_frame: list[list[Detection]] = [[] for _ in range(cfg.frame_count)]
    for s in sorted(stays, key=lambda s: (s.lot_id, s.enter_frame)):
        for t in range(s.enter_frame, s.exit_frame + 1):
            per_frame[t].append(
                _detection(cfg, t, (float(s.span[0]), float(s.span[1])), CLEAN_CONFIDENCE, vehicles[s.vehicle_id], s.lot_id)
            )
    frames = [FrameObservation(t, t * cfg.sample_period, tuple(d)) for t, d in enumerate(per_frame)]
    truth = ScenarioTruth(tuple(stays), vehicles, cfg.frame_count, cfg.sample_period)
    return truth, frames


def check_noise_budget(cfg: ScenarioConfig) -> None:
    th = cfg.thresholds
    if not (cfg.sigma_c < th.t_c / 2 and cfg.sigma_h < th.t_b / 2 and 2 * cfg.sigma_l < th.t_l / 2):
        raise ScenarioError("noise exceeds match budget")


def _perturb_models(rng, base: np.ndarray, sigma: float) -> np.ndarray:
    """Rows of ``base`` displaced by at most ``sigma`` in L1."""
    k = base.shape[0]
    u = rng.random((k, MODEL_DIM)) - 0.5
    u *= (sigma * rng.random(k) / np.abs(u).sum(axis=1))[:, None]
    # clipping toward (0, 1) can only shrink the displacement
    return np.clip(base + u, EPS, 1 - EPS)


def _hist_distances(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    bc = np.clip(np.sqrt(p * q).sum(axis=1), 0.0, 1.0)
    return np.sqrt(1.0 - bc)


def _perturb_hists(rng, base: np.ndarray, sigma: float) -> np.ndarray:
    """Rows of ``base`` mixed with random histograms, within ``sigma`` Hellinger distance."""
    # squared Hellinger distance is jointly convex: H^2(p, (1-t)p + t r) <= t
    k = base.shape[0]
    t = sigma * sigma * rng.random(k)
    other = rng.dirichlet(np.ones(HIST_DIM), size=k)
    while True:
        mixed = (1.0 - t[:, None]) * base + t[:, None] * other
        mixed /= mixed.sum(axis=1, keepdims=True)
        bad = _hist_distances(mixed, base) > sigma
        if not bad.any():
            return mixed
        # only floating-point slack can land here
        t = np.where(bad, t / 2, t)


def _occluded(cfg: ScenarioConfig, stays: Sequence[StayRecord], rng) -> set[tuple[int, int]]:
    hidden: set[tuple[int, int]] = set()
    if cfg.burst_rate == 0 or cfg.burst_max_len == 0:
        return hidden
    p = cfg.burst_rate / 100.0
    for s in stays:
        lo, hi = s.enter_frame, s.exit_frame
        if cfg.protect_stay_edges:
            lo, hi = lo + 1, hi - 1
        t = lo
        while t <= hi:
            if rng.random() < p:
                end = min(t + int(rng.integers(1, cfg.burst_max_len + 1)) - 1, hi)
                hidden.update((s.vehicle_id, f) for f in range(t, end + 1))
                t = end + 2  # keep one visible frame between bursts
            else:
                t += 1
    return hidden


def _false_positives(cfg: ScenarioConfig, rng, frames: Sequence[int]) -> list[Detection]:
    """One false detection with unrelated features for each listed frame."""
    k = len(frames)
    if k == 0:
        return []
    x_min = np.array([lot.x_min for lot in cfg.lots])
    x_max = np.array([lot.x_max for lot in cfg.lots])
    which = rng.integers(0, len(cfg.lots), size=k)
    width = x_max[which] - x_min[which]
    w = rng.integers(np.minimum(cfg.vehicle_width_min, width), width + 1)
    left = x_min[which] + rng.integers(0, width - w + 1)
    model = np.clip(rng.dirichlet(np.full(MODEL_DIM, 0.5), size=k), EPS, 1 - EPS)
    hist = rng.dirichlet(np.ones(HIST_DIM), size=k)
    hist /= hist.sum(axis=1, keepdims=True)
    conf = rng.uniform(0.5, 1.0, size=k)
    model.setflags(write=False)
    hist.setflags(write=False)
    return [
        _detection(
            cfg, f, (float(left[i]), float(left[i] + w[i])), float(conf[i]),
            VehicleFeatures._trusted(model[i], hist[i]), cfg.lots[which[i]].id,
        )
        for i, f in enumerate(frames)
    ]


def degrade_stream(
    truth: ScenarioTruth, clean: Sequence[FrameObservation], cfg: ScenarioConfig
) -> list[FrameObservation]:
    """Apply occlusion bursts, independent misses, bounded feature noise and false positives."""
    check_noise_budget(cfg)
    _, _, rng = _rngs(cfg.seed)
    hidden = _occluded(cfg, truth.stays, rng)
    owner: dict[tuple[int, int], int] = {}
    for s in truth.stays:
        for t in range(s.enter_frame, s.exit_frame + 1):
            owner[(t, s.lot_id)] = s.vehicle_id

    n_clean = sum(len(obs.detections) for obs in clean)
    dropped = rng.random(n_clean) < cfg.p_drop if cfg.p_drop > 0 else np.zeros(n_clean, bool)
    survivors: list[list[Detection]] = []
    k = 0
    for obs in clean:
        keep = []
        for det in obs.detections:
            if not dropped[k] and (owner[(obs.frame, _lot_of(det, cfg))], obs.frame) not in hidden:
                keep.append(det)
            k += 1
        survivors.append(keep)

    jitter = int(math.floor(cfg.sigma_l))
    if cfg.sigma_c > 0 or cfg.sigma_h > 0 or jitter > 0:
        flat = [d for keep in survivors for d in keep]
        m = len(flat)
        models = np.array([d.features.model_vec for d in flat]).reshape(m, MODEL_DIM)
        hists = np.array([d.features.color_hist for d in flat]).reshape(m, HIST_DIM)
        if cfg.sigma_c > 0:
            models = _perturb_models(rng, models, cfg.sigma_c)
        if cfg.sigma_h > 0:
            hists = _perturb_hists(rng, hists, cfg.sigma_h)
        models.setflags(write=False)
        hists.setflags(write=False)
        shifts = rng.integers(-jitter, jitter + 1, size=(m, 2)) if jitter else np.zeros((m, 2), int)
        it = iter(range(m))
        for keep in survivors:
            for j, det in enumerate(keep):
                i = next(it)
                span = (det.span[0] + int(shifts[i, 0]), det.span[1] + int(shifts[i, 1]))
                mask = _mask_for(cfg, *span) if det.mask is not None else None
                feats = VehicleFeatures._trusted(models[i], hists[i])
                keep[j] = Detection(det.frame, span, det.confidence, feats, det.park_status, mask)

    fp_frames = []
    if cfg.fp_rate > 0:
        hits = rng.random(len(clean)) < cfg.fp_rate
        fp_frames = [obs.frame for obs, h in zip(clean, hits) if h]
    fps = dict(zip(fp_frames, _false_positives(cfg, rng, fp_frames)))
    out = []
    for obs, keep in zip(clean, survivors):
        if obs.frame in fps:
            keep.append(fps[obs.frame])
        out.append(FrameObservation(obs.frame, obs.time_s, tuple(keep)))
    return out


def _lot_of(det: Detection, cfg: ScenarioConfig) -> int:
    if isinstance(det.park_status, Parked):
        return det.park_status.lot_id
    mid = 0.5 * (det.left + det.right)
    for lot in cfg.lots:
        if lot.x_min <= mid <= lot.x_max:
            return lot.id
    raise ScenarioError(f"detection at {det.span} lies in no lot")


def simulate(cfg: ScenarioConfig) -> tuple[ScenarioTruth, list[FrameObservation], SiteGeometry]:
    truth, clean = generate_scenario(cfg)
    return truth, degrade_stream(truth, clean, cfg), scenario_geometry(cfg)
