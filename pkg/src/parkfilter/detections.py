"""Per-frame detection records and their JSON form."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import NOT_PARKED, MaskFootprint, NotParked, Parked, ParkStatus

MODEL_DIM = 196
HIST_DIM = 24
HIST_SUM_TOL = 1e-6


class RecordError(ValueError):
    """A detection or frame record violates its type invariants."""

    def __init__(self, message: str, field_name: str | None = None):
        super().__init__(message)
        self.field_name = field_name


@dataclass(frozen=True, eq=False, slots=True)
class VehicleFeatures:
    model_vec: np.ndarray
    color_hist: np.ndarray

    def __post_init__(self):
        mv = np.asarray(self.model_vec, dtype=float)
        ch = np.asarray(self.color_hist, dtype=float)
        if mv.shape != (MODEL_DIM,):
            raise RecordError(f"model_vec must have length {MODEL_DIM}, got {mv.size}", "model_vec")
        if ch.shape != (HIST_DIM,):
            raise RecordError(f"color_hist must have length {HIST_DIM}, got {ch.size}", "color_hist")
        # min/max rather than elementwise masks: NaN fails both comparisons
        if not (mv.min() > 0.0 and mv.max() < 1.0):
            raise RecordError("model_vec components must lie in (0, 1)", "model_vec")
        if not (ch.min() >= 0.0 and ch.max() <= 1.0):
            raise RecordError("color_hist components must lie in [0, 1]", "color_hist")
        if not abs(ch.sum() - 1.0) <= HIST_SUM_TOL:
            raise RecordError("color_hist must sum to 1", "color_hist")
        mv.setflags(write=False)
        ch.setflags(write=False)
        object.__setattr__(self, "model_vec", mv)
        object.__setattr__(self, "color_hist", ch)

    @classmethod
    def _trusted(cls, model_vec: np.ndarray, color_hist: np.ndarray) -> "VehicleFeatures":
        """Wrap read-only arrays already known to satisfy the invariants."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "model_vec", model_vec)
        object.__setattr__(obj, "color_hist", color_hist)
        return obj

    def __eq__(self, other):
        if not isinstance(other, VehicleFeatures):
            return NotImplemented
        return np.array_equal(self.model_vec, other.model_vec) and np.array_equal(
            self.color_hist, other.color_hist
        )

    __hash__ = None


@dataclass(frozen=True, slots=True)
class Detection:
    frame: int
    span: tuple[float, float]
    confidence: float
    features: VehicleFeatures
    park_status: Optional[ParkStatus] = None
    mask: Optional[MaskFootprint] = None

    def __post_init__(self):
        left, right = self.span
        if right < left:
            raise RecordError(f"span right {right} < left {left}", "span")
        if self.frame < 0:
            raise RecordError("frame must be >= 0", "frame")
        if not 0.0 <= self.confidence <= 1.0:
            raise RecordError("confidence must lie in [0, 1]", "confidence")
        if self.park_status is None and self.mask is None:
            raise RecordError("detection needs either a park status or a mask", "lot_id")
        object.__setattr__(self, "span", (float(left), float(right)))

    @property
    def left(self) -> float:
        return self.span[0]

    @property
    def right(self) -> float:
        return self.span[1]

    def to_json(self) -> dict:
        out = {
            "span": [self.span[0], self.span[1]],
            "confidence": self.confidence,
            "model_vec": self.features.model_vec.tolist(),
            "color_hist": self.features.color_hist.tolist(),
        }
        if isinstance(self.park_status, Parked):
            out["lot_id"] = self.park_status.lot_id
        elif isinstance(self.park_status, NotParked):
            out["lot_id"] = None
        if self.mask is not None:
            out["mask"] = self.mask.to_json()
        return out

    @classmethod
    def from_json(cls, frame: int, data: dict) -> "Detection":
        if not isinstance(data, dict):
            raise RecordError("detection must be an object", "detections")
        for key in ("span", "confidence", "model_vec", "color_hist"):
            if key not in data:
                raise RecordError(f"missing field {key!r}", key)
        span = data["span"]
        if not (isinstance(span, list) and len(span) == 2):
            raise RecordError("span must be [left, right]", "span")
        status: Optional[ParkStatus] = None
        if "lot_id" in data:
            status = NOT_PARKED if data["lot_id"] is None else Parked(int(data["lot_id"]))
        mask = None
        if data.get("mask") is not None:
            try:
                mask = MaskFootprint.from_rows(data["mask"]["rows"])
            except (KeyError, TypeError, ValueError) as exc:
                raise RecordError(f"bad mask: {exc}", "mask") from exc
        return cls(
            frame=frame,
            span=(float(span[0]), float(span[1])),
            confidence=float(data["confidence"]),
            features=VehicleFeatures(
                np.asarray(data["model_vec"], dtype=float),
                np.asarray(data["color_hist"], dtype=float),
            ),
            park_status=status,
            mask=mask,
        )


@dataclass(frozen=True, slots=True)
class FrameObservation:
    frame: int
    time_s: float
    detections: tuple[Detection, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.frame < 0:
            raise RecordError("frame must be >= 0", "frame")
        for det in self.detections:
            if det.frame != self.frame:
                raise RecordError(
                    f"detection frame {det.frame} differs from observation frame {self.frame}",
                    "detections",
                )
        object.__setattr__(self, "detections", tuple(self.detections))

    def to_json(self) -> dict:
        return {
            "frame": self.frame,
            "time_s": self.time_s,
            "detections": [d.to_json() for d in self.detections],
        }

    @classmethod
    def from_json(cls, data: dict) -> "FrameObservation":
        if not isinstance(data, dict):
            raise RecordError("frame record must be a JSON object")
        for key in ("frame", "time_s", "detections"):
            if key not in data:
                raise RecordError(f"missing field {key!r}", key)
        frame = data["frame"]
        if not isinstance(frame, int) or isinstance(frame, bool):
            raise RecordError("frame must be an integer", "frame")
        if not isinstance(data["detections"], list):
            raise RecordError("detections must be a list", "detections")
        dets = tuple(Detection.from_json(frame, d) for d in data["detections"])
        return cls(frame=frame, time_s=float(data["time_s"]), detections=dets)
