"""Planar primitives: points, axis-aligned rectangles, l-infinity half balls,
history regions and the 45 degree cone.

Rectangles are kept unmerged inside a :class:`HistoryRegion`; height and
membership queries tolerate overlap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Point",
    "Rect",
    "EMPTY_RECT",
    "HistoryRegion",
    "Cone",
    "upper_half_ball",
    "region_height",
    "clip_above",
    "region_contains",
    "top_boundary_hit",
]


@dataclass(frozen=True)
class Point:
    x1: float
    x2: float

    def __post_init__(self):
        if not (math.isfinite(self.x1) and math.isfinite(self.x2)):
            raise ValueError(f"non-finite coordinates ({self.x1}, {self.x2})")

    def __add__(self, other: "Point") -> "Point":
        return Point(self.x1 + other.x1, self.x2 + other.x2)

    def __sub__(self, other: "Point") -> "Point":
        return Point(self.x1 - other.x1, self.x2 - other.x2)

    def linf(self, other: "Point") -> float:
        return max(abs(self.x1 - other.x1), abs(self.x2 - other.x2))

    def as_tuple(self) -> tuple[float, float]:
        return (self.x1, self.x2)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle with per-side openness (all sides open by default)."""

    lo1: float
    hi1: float
    lo2: float
    hi2: float
    closed_lo1: bool = False
    closed_hi1: bool = False
    closed_lo2: bool = False
    closed_hi2: bool = False

    def __post_init__(self):
        if self.lo1 > self.hi1 or self.lo2 > self.hi2:
            raise ValueError(f"inverted rectangle {self}")

    @classmethod
    def closed(cls, lo1: float, hi1: float, lo2: float, hi2: float) -> "Rect":
        return cls(lo1, hi1, lo2, hi2, True, True, True, True)

    @property
    def is_empty(self) -> bool:
        if self.lo1 == self.hi1 and not (self.closed_lo1 and self.closed_hi1):
            return True
        if self.lo2 == self.hi2 and not (self.closed_lo2 and self.closed_hi2):
            return True
        return False

    def normalized(self) -> "Rect":
        return EMPTY_RECT if self.is_empty else self

    @property
    def area(self) -> float:
        return (self.hi1 - self.lo1) * (self.hi2 - self.lo2)

    def contains(self, p: Point) -> bool:
        x, y = p.x1, p.x2
        if self.is_empty:
            return False
        ok1 = (self.lo1 <= x if self.closed_lo1 else self.lo1 < x) and (
            x <= self.hi1 if self.closed_hi1 else x < self.hi1
        )
        ok2 = (self.lo2 <= y if self.closed_lo2 else self.lo2 < y) and (
            y <= self.hi2 if self.closed_hi2 else y < self.hi2
        )
        return ok1 and ok2

    def above(self, floor: float) -> "Rect":
        """Intersection with the open half-plane {x2 > floor}."""
        if self.hi2 <= floor or self.is_empty:
            return EMPTY_RECT
        if self.lo2 >= floor:
            return self
        return Rect(
            self.lo1, self.hi1, floor, self.hi2,
            self.closed_lo1, self.closed_hi1, False, self.closed_hi2,
        )


EMPTY_RECT = Rect(0.0, 0.0, 0.0, 0.0)


def upper_half_ball(center: Point, r: float) -> Rect:
    """Open rectangle (c1-r, c1+r) x (c2, c2+r): the upper half of the l-inf ball."""
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    return Rect(center.x1 - r, center.x1 + r, center.x2, center.x2 + r)


@dataclass(frozen=True)
class HistoryRegion:
    rects: tuple[Rect, ...] = ()
    floor: float = 0.0

    def __post_init__(self):
        for r in self.rects:
            if r.is_empty:
                raise ValueError("history regions hold non-empty rectangles only")
            if r.lo2 < self.floor:
                raise ValueError(f"rectangle {r} reaches below floor {self.floor}")

    @property
    def is_empty(self) -> bool:
        return not self.rects

    def height(self) -> float:
        return region_height(self)

    def contains(self, p: Point) -> bool:
        return region_contains(self, p)

    def with_rect(self, rect: Rect) -> "HistoryRegion":
        """Union with one more rectangle (must already lie above the floor)."""
        rect = rect.above(self.floor)
        if rect.is_empty:
            return self
        return HistoryRegion(self.rects + (rect,), self.floor)

    def clip_above(self, floor: float) -> "HistoryRegion":
        return clip_above(self, floor)

    def as_array(self) -> np.ndarray:
        """(n, 4) float array of (lo1, hi1, lo2, hi2); openness is implied."""
        if not self.rects:
            return np.zeros((0, 4))
        return np.array([(r.lo1, r.hi1, r.lo2, r.hi2) for r in self.rects], dtype=float)

    @classmethod
    def from_array(cls, arr: np.ndarray, floor: float) -> "HistoryRegion":
        return cls(tuple(Rect(*map(float, row)) for row in arr), float(floor))

    def area_upper_bound(self) -> float:
        return sum(r.area for r in self.rects)


def region_height(H: HistoryRegion) -> float:
    if not H.rects:
        return 0.0
    return max(r.hi2 for r in H.rects) - min(r.lo2 for r in H.rects)


def clip_above(H: HistoryRegion, floor: float) -> HistoryRegion:
    if floor < H.floor:
        raise ValueError(f"floor may only rise: {floor} < {H.floor}")
    kept = []
    for r in H.rects:
        c = r.above(floor)
        if not c.is_empty:
            kept.append(c)
    return HistoryRegion(tuple(kept), floor)


def region_contains(H: HistoryRegion, p: Point) -> bool:
    return any(r.contains(p) for r in H.rects)


def top_boundary_hit(mover: Point, ancestor: Point) -> bool:
    """True when the ancestor sits on the (closed) top side of its half ball."""
    dy = ancestor.x2 - mover.x2
    if not dy > 0:
        raise ValueError("ancestor must lie strictly above the mover")
    return dy == max(abs(ancestor.x1 - mover.x1), dy)


@dataclass(frozen=True)
class Cone:
    """Upward cone of half-angle pi/4 around the vertical axis."""

    apex: Point

    def contains(self, p: Point) -> bool:
        return p.x2 - self.apex.x2 >= abs(p.x1 - self.apex.x1)
