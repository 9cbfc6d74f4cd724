"""Distance kernels and the pairwise same-vehicle predicate."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .detections import HIST_DIM, HIST_SUM_TOL, MODEL_DIM, Detection


@dataclass(frozen=True)
class MatchThresholds:
    """Strict upper bounds under which two detections are the same vehicle.

    ``t_c`` bounds the L1 distance of model vectors, ``t_b`` the Bhattacharyya
    (Hellinger form) distance of color histograms, ``t_l`` the L1 distance of
    horizontal spans in pixels.
    """

    t_c: float = 0.5
    t_b: float = 0.3
    t_l: float = 40.0

    def __post_init__(self):
        if self.t_c <= 0 or self.t_l <= 0:
            raise ValueError("t_c and t_l must be positive")
        if not 0 < self.t_b <= 1:
            raise ValueError("t_b must lie in (0, 1]")


def model_distance(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (MODEL_DIM,) or b.shape != (MODEL_DIM,):
        raise ValueError(f"model vectors must both have length {MODEL_DIM}")
    return float(np.abs(a - b).sum())


def bhattacharyya_coefficient(a, b) -> float:
    return float(np.sqrt(np.asarray(a, dtype=float) * np.asarray(b, dtype=float)).sum())


def histogram_distance(a, b) -> float:
    """``sqrt(1 - BC(a, b))``, bounded in [0, 1]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (HIST_DIM,) or b.shape != (HIST_DIM,):
        raise ValueError(f"histograms must both have length {HIST_DIM}")
    for h in (a, b):
        if abs(h.sum() - 1.0) > HIST_SUM_TOL:
            raise ValueError("histogram is not normalized")
    if np.array_equal(a, b):
        return 0.0
    bc = min(1.0, max(0.0, bhattacharyya_coefficient(a, b)))
    return math.sqrt(1.0 - bc)


def location_distance(a, b) -> float:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def is_match(a: Detection, b: Detection, th: MatchThresholds) -> bool:
    # cheapest test first
    if location_distance(a.span, b.span) >= th.t_l:
        return False
    if model_distance(a.features.model_vec, b.features.model_vec) >= th.t_c:
        return False
    return histogram_distance(a.features.color_hist, b.features.color_hist) < th.t_b


def match_matrix(
    spans_new: np.ndarray,
    model_new: np.ndarray,
    sqrt_hist_new: np.ndarray,
    spans_old: np.ndarray,
    model_old: np.ndarray,
    sqrt_hist_old: np.ndarray,
    th: MatchThresholds,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``is_match`` between two detection batches.

    Histograms are passed as elementwise square roots. Returns index arrays
    ``(i_new, j_old)`` of matching pairs.
    """
    if len(spans_new) == 0 or len(spans_old) == 0:
        empty = np.empty(0, dtype=np.intp)
        return empty, empty
    loc = np.abs(spans_new[:, None, :] - spans_old[None, :, :]).sum(axis=2)
    i, j = np.nonzero(loc < th.t_l)
    if i.size == 0:
        return i, j
    mdist = np.abs(model_new[i] - model_old[j]).sum(axis=1)
    keep = mdist < th.t_c
    i, j = i[keep], j[keep]
    if i.size == 0:
        return i, j
    bc = np.clip((sqrt_hist_new[i] * sqrt_hist_old[j]).sum(axis=1), 0.0, 1.0)
    keep = np.sqrt(1.0 - bc) < th.t_b
    return i[keep], j[keep]
