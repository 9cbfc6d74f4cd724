"""Lot/road polygons, parked classification and horizontal lot utilization.

Masks are row run-length encoded. A pixel ``(x, y)`` is represented by its
center ``(x + 0.5, y + 0.5)``; polygon membership uses the even-odd rule with
points on the boundary counted as inside.
"""
from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

Point = tuple[float, float]
Polygon = tuple[Point, ...]
Span = tuple[float, float]


class GeometryError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class Parked:
    lot_id: int


@dataclass(frozen=True)
class NotParked:
    pass


NOT_PARKED = NotParked()
ParkStatus = Union[Parked, NotParked]


@dataclass(frozen=True)
class MaskFootprint:
    """Pixel mask as ``((y, ((x_start, x_end), ...)), ...)`` with half-open runs."""

    rows: tuple[tuple[int, tuple[tuple[int, int], ...]], ...]

    @classmethod
    def from_rows(cls, rows, image_width: int | None = None) -> "MaskFootprint":
        norm = tuple(
            (int(y), tuple((int(a), int(b)) for a, b in runs)) for y, runs in rows
        )
        mask = cls(norm)
        mask.validate(image_width)
        return mask

    @classmethod
    def rectangle(cls, x0: int, x1: int, y0: int, y1: int) -> "MaskFootprint":
        return cls(tuple((y, ((x0, x1),)) for y in range(y0, y1)))

    def validate(self, image_width: int | None = None) -> None:
        for y, runs in self.rows:
            prev_end = None
            for a, b in runs:
                if b <= a:
                    raise GeometryError(f"empty or reversed run [{a}, {b}) in row {y}")
                if a < 0 or (image_width is not None and b > image_width):
                    raise GeometryError(f"run [{a}, {b}) in row {y} outside image width")
                if prev_end is not None and a < prev_end:
                    raise GeometryError(f"runs in row {y} overlap or are unsorted")
                prev_end = b

    @property
    def area(self) -> int:
        return sum(b - a for _, runs in self.rows for a, b in runs)

    def to_json(self) -> dict:
        return {"rows": [[y, [[a, b] for a, b in runs]] for y, runs in self.rows]}


@dataclass(frozen=True)
class LotRegion:
    id: int
    polygon: Polygon
    x_min: float = field(init=False)
    x_max: float = field(init=False)

    def __post_init__(self):
        xs = [p[0] for p in self.polygon]
        object.__setattr__(self, "x_min", min(xs))
        object.__setattr__(self, "x_max", max(xs))

    @property
    def width(self) -> float:
        return self.x_max - self.x_min


@dataclass(frozen=True, slots=True)
class UtilizationSample:
    lot_id: int
    time_s: float
    utilization: float


@dataclass(frozen=True)
class SiteGeometry:
    image_width: int
    image_height: int
    lots: tuple[LotRegion, ...]
    road_areas: tuple[Polygon, ...] = ()
    road_fraction_threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.road_fraction_threshold <= 1.0:
            raise GeometryError("road_fraction_threshold must lie in [0, 1]")
        ids = [lot.id for lot in self.lots]
        if len(set(ids)) != len(ids):
            raise GeometryError(f"duplicate lot ids in {ids}")
        for lot in self.lots:
            self._check_polygon(lot.polygon, f"lot {lot.id}")
            if lot.x_max <= lot.x_min:
                raise GeometryError(f"lot {lot.id}: degenerate lot")
        for i, poly in enumerate(self.road_areas):
            self._check_polygon(poly, f"road area {i}")

    def _check_polygon(self, poly: Polygon, what: str) -> None:
        if len(poly) < 3:
            raise GeometryError(f"{what}: polygon needs at least 3 vertices")
        for x, y in poly:
            if not (0 <= x <= self.image_width and 0 <= y <= self.image_height):
                raise GeometryError(f"{what}: vertex ({x}, {y}) outside image bounds")
        if not is_simple_polygon(poly):
            raise GeometryError(f"{what}: polygon is self-intersecting")

    def lot(self, lot_id: int) -> LotRegion:
        for lot in self.lots:
            if lot.id == lot_id:
                return lot
        raise KeyError(lot_id)

    @property
    def lot_ids(self) -> tuple[int, ...]:
        return tuple(lot.id for lot in self.lots)

    @classmethod
    def from_json(cls, data: dict) -> "SiteGeometry":
        try:
            lots = tuple(
                LotRegion(int(lot["id"]), _polygon(lot["polygon"])) for lot in data["lots"]
            )
            roads = tuple(_polygon(r["polygon"]) for r in data.get("road_areas", []))
            return cls(
                image_width=int(data["image_width"]),
                image_height=int(data["image_height"]),
                lots=lots,
                road_areas=roads,
                road_fraction_threshold=float(data.get("road_fraction_threshold", 0.5)),
            )
        except (KeyError, TypeError) as exc:
            raise GeometryError(f"malformed geometry: {exc!r}") from exc

    def to_json(self) -> dict:
        return {
            "image_width": self.image_width,
            "image_height": self.image_height,
            "road_fraction_threshold": self.road_fraction_threshold,
            "lots": [{"id": lot.id, "polygon": [list(p) for p in lot.polygon]} for lot in self.lots],
            "road_areas": [{"polygon": [list(p) for p in poly]} for poly in self.road_areas],
        }


def _polygon(points) -> Polygon:
    return tuple((float(x), float(y)) for x, y in points)


def load_geometry(path: str | Path) -> SiteGeometry:
    with open(path) as fh:
        return SiteGeometry.from_json(json.load(fh))


def _orient(p: Point, q: Point, r: Point) -> float:
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def _on_segment(p: Point, q: Point, r: Point) -> bool:
    # r collinear with p-q assumed
    return min(p[0], q[0]) <= r[0] <= max(p[0], q[0]) and min(p[1], q[1]) <= r[1] <= max(p[1], q[1])


def segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool:
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and ((d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)):
        return True
    return (
        (d1 == 0 and _on_segment(q1, q2, p1))
        or (d2 == 0 and _on_segment(q1, q2, p2))
        or (d3 == 0 and _on_segment(p1, p2, q1))
        or (d4 == 0 and _on_segment(p1, p2, q2))
    )


def is_simple_polygon(poly: Sequence[Point]) -> bool:
    n = len(poly)
    edges = [(poly[i], poly[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                # adjacent edges share a vertex; only a fold-back overlap is illegal
                a, b = edges[i]
                c, d = edges[j]
                shared = b if j == i + 1 else a
                other_i = a if j == i + 1 else b
                other_j = d if j == i + 1 else c
                if _orient(shared, other_i, other_j) == 0 and (
                    (other_i[0] - shared[0]) * (other_j[0] - shared[0])
                    + (other_i[1] - shared[1]) * (other_j[1] - shared[1])
                ) > 0:
                    return False
                continue
            if segments_intersect(*edges[i], *edges[j]):
                return False
    return True


def _row_inside_intervals(poly: Polygon, yc: float) -> list[tuple[float, float]]:
    """Closed x-intervals of the horizontal line ``y = yc`` lying inside ``poly``."""
    n = len(poly)
    crossings: list[float] = []
    intervals: list[tuple[float, float]] = []
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if y1 == y2:
            if y1 == yc:
                intervals.append((min(x1, x2), max(x1, x2)))
            continue
        lo, hi = (y1, y2) if y1 < y2 else (y2, y1)
        if not lo <= yc <= hi:
            continue
        x = x1 + (yc - y1) * (x2 - x1) / (y2 - y1)
        intervals.append((x, x))  # boundary point
        if lo <= yc < hi:
            crossings.append(x)
    crossings.sort()
    intervals.extend(zip(crossings[0::2], crossings[1::2]))
    return intervals


@functools.lru_cache(maxsize=65536)
def _row_pixels(poly: Polygon, y: int) -> tuple[tuple[int, int], ...]:
    """Merged inclusive ranges of integer x whose center (x + 0.5, y + 0.5) lies in ``poly``."""
    covered = []
    for lo, hi in _row_inside_intervals(poly, y + 0.5):
        start, stop = math.ceil(lo - 0.5), math.floor(hi - 0.5)
        if stop >= start:
            covered.append((start, stop))
    covered.sort()
    merged: list[list[int]] = []
    for s, e in covered:
        if merged and s <= merged[-1][1] + 1:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    return tuple((s, e) for s, e in merged)


def region_fraction(mask: MaskFootprint, region: Sequence[Point]) -> float:
    """Fraction of mask pixels whose centers lie inside ``region``."""
    area = mask.area
    if area <= 0:
        raise GeometryError("empty mask")
    poly = tuple(tuple(p) for p in region)
    ys = [p[1] for p in poly]
    y_lo, y_hi = min(ys), max(ys)
    inside = 0
    for y, runs in mask.rows:
        yc = y + 0.5
        if yc < y_lo or yc > y_hi:
            continue
        ranges = _row_pixels(poly, y)
        for a, b in runs:
            for s, e in ranges:
                n = min(b - 1, e) - max(a, s) + 1
                if n > 0:
                    inside += n
    return inside / area


def classify_parked(mask: MaskFootprint, geom: SiteGeometry) -> ParkStatus:
    road = sum(region_fraction(mask, poly) for poly in geom.road_areas)
    if road > geom.road_fraction_threshold:
        return NOT_PARKED
    best_id, best = None, 0.0
    for lot in sorted(geom.lots, key=lambda lot: lot.id):
        frac = region_fraction(mask, lot.polygon)
        if frac > best:
            best_id, best = lot.id, frac
    return NOT_PARKED if best_id is None else Parked(best_id)


def union_length(spans: Sequence[Span], lo: float, hi: float) -> float:
    """Length of the union of ``spans`` clipped to ``[lo, hi]``."""
    if len(spans) <= 1:
        if not spans:
            return 0.0
        (l, r), = spans
        return max(0.0, min(r, hi) - max(l, lo))
    clipped = sorted(
        (max(l, lo), min(r, hi)) for l, r in spans if min(r, hi) > max(l, lo)
    )
    total = 0.0
    cur_l = cur_r = None
    for l, r in clipped:
        if cur_r is None or l > cur_r:
            if cur_r is not None:
                total += cur_r - cur_l
            cur_l, cur_r = l, r
        elif r > cur_r:
            cur_r = r
    if cur_r is not None:
        total += cur_r - cur_l
    return total


def lot_utilization(lot: LotRegion, parked_spans: Sequence[Span]) -> float:
    for l, r in parked_spans:
        if r < l:
            raise GeometryError(f"span ({l}, {r}) has right < left")
    width = lot.x_max - lot.x_min
    if width <= 0:
        raise GeometryError("degenerate lot")
    util = union_length(parked_spans, lot.x_min, lot.x_max) / width
    return min(1.0, max(0.0, util))


def rectangle(x0: float, y0: float, x1: float, y1: float) -> Polygon:
    return ((x0, y0), (x1, y0), (x1, y1), (x0, y1))
