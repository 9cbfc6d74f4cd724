import numpy as np
import pytest

from parkfilter.detections import HIST_DIM, MODEL_DIM, Detection, FrameObservation, VehicleFeatures
from parkfilter.geometry import LotRegion, Parked, SiteGeometry, rectangle

PERIOD = 15.0


def make_features(cls: int = 0, bin_: int = 0, weight: float = 0.9) -> VehicleFeatures:
    model = np.full(MODEL_DIM, (1.0 - weight) / (MODEL_DIM - 1))
    model[cls] = weight
    hist = np.full(HIST_DIM, (1.0 - weight) / (HIST_DIM - 1))
    hist[bin_] = weight
    return VehicleFeatures(model, hist / hist.sum())


def make_det(frame, span, lot=0, feats=None, conf=0.9) -> Detection:
    return Detection(frame, (float(span[0]), float(span[1])), conf, feats or make_features(), Parked(lot))


def make_obs(frame, dets=(), period=PERIOD) -> FrameObservation:
    return FrameObservation(frame, frame * period, tuple(dets))


def lots_geometry(n_lots=2, pitch=300, width=280, height=400) -> SiteGeometry:
    lots = tuple(LotRegion(i, rectangle(10 + pitch * i, 100, 10 + pitch * i + width, 200)) for i in range(n_lots))
    img_w = 20 + pitch * n_lots
    return SiteGeometry(img_w, height, lots, (rectangle(0, 250, img_w, 350),), 0.5)


@pytest.fixture
def geom2():
    return lots_geometry(2)
