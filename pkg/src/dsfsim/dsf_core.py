"""Single-path DSF semantics on one realization: the ancestor map, grown paths
and the coalescing time of two paths started on a common horizontal line."""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .geometry import Point
from .ppp import _nearest

__all__ = ["DsfPath", "CoalescenceResult", "ancestor", "grow_path", "coalescing_time",
           "coalescence_sample",
           "DEFAULT_MAX_STEPS"]

DEFAULT_MAX_STEPS = 10**7

_NO_RECTS = np.zeros((0, 4))
_NO_EXTRA = np.zeros((0, 2))


@dataclass(frozen=True)
class DsfPath:
    start: Point
    vertices: tuple[Point, ...]

    def __post_init__(self):
        if not self.vertices or self.vertices[0] != self.start:
            raise ValueError("the first vertex must be the start point")
        for a, b in zip(self.vertices, self.vertices[1:]):
            if not b.x2 > a.x2:
                raise ValueError("vertex ordinates must increase strictly")

    @property
    def tip(self) -> Point:
        return self.vertices[-1]

    def __len__(self) -> int:
        return len(self.vertices)


@dataclass(frozen=True)
class CoalescenceResult:
    merged: bool
    t: float
    merge_vertex: Point | None
    steps_used: int

    @property
    def censored(self) -> bool:
        return not self.merged


@nb.njit(cache=True)
def _grow(mode, seed, stream, lam, fixed, x, y, y_stop):
    out = np.empty((64, 2))
    out[0, 0] = x
    out[0, 1] = y
    n = 1
    while y <= y_stop:
        x, y, _, _ = _nearest(mode, seed, stream, lam, fixed, x, y, _NO_RECTS, 0,
                              _NO_EXTRA, 0)
        if n == out.shape[0]:
            grown = np.empty((2 * n, 2))
            grown[:n] = out[:n]
            out = grown
        out[n, 0] = x
        out[n, 1] = y
        n += 1
    return out[:n]


@nb.njit(cache=True)
def _coalesce(mode, seed, stream, lam, fixed, ax, ay, bx, by, t_max, max_steps):
    """Tandem growth; returns (merged, t, merge_x, merge_y, steps)."""
    y0 = ay
    y_stop = y0 + t_max
    steps = 0
    while steps < max_steps:
        if ay > y_stop and by > y_stop:
            break
        # advance the lower tip, ties to the lower abscissa
        if ay < by or (ay == by and ax <= bx):
            ax, ay, _, _ = _nearest(mode, seed, stream, lam, fixed, ax, ay, _NO_RECTS, 0,
                                    _NO_EXTRA, 0)
        else:
            bx, by, _, _ = _nearest(mode, seed, stream, lam, fixed, bx, by, _NO_RECTS, 0,
                                    _NO_EXTRA, 0)
        steps += 1
        if ax == bx and ay == by:
            return True, ay - y0, ax, ay, steps
    return False, t_max, np.nan, np.nan, steps


def ancestor(x: Point, ppp) -> Point:
    """Nearest realization point (l-inf) with strictly larger ordinate."""
    px, py, _, _ = _nearest(*ppp.source(), x.x1, x.x2, _NO_RECTS, 0, _NO_EXTRA, 0)
    return Point(float(px), float(py))


def grow_path(x: Point, ppp, height_budget: float) -> DsfPath:
    """Iterate the ancestor map until the tip rises above ``x.x2 + height_budget``."""
    if not height_budget > 0:
        raise ValueError(f"height_budget must be positive, got {height_budget}")
    arr = _grow(*ppp.source(), x.x1, x.x2, x.x2 + height_budget)
    verts = (x,) + tuple(Point(float(a), float(b)) for a, b in arr[1:])
    return DsfPath(x, verts)


def coalescing_time(x: Point, y: Point, ppp, t_max: float,
                    max_steps: int = DEFAULT_MAX_STEPS) -> CoalescenceResult:
    """Ordinate gap from the start line to the first common vertex of the two paths.

    Runs that reach ``t_max`` above the start line without merging (or exhaust
    ``max_steps``) come back unmerged with ``t = t_max``.
    """
    if x.x2 != y.x2:
        raise ValueError("start points must share one ordinate")
    if not t_max > 0:
        raise ValueError(f"t_max must be positive, got {t_max}")
    merged, t, mx, my, steps = _coalesce(*ppp.source(), x.x1, x.x2, y.x1, y.x2,
                                         float(t_max), int(max_steps))
    mv = Point(float(mx), float(my)) if merged else None
    return CoalescenceResult(bool(merged), float(t), mv, int(steps))


@nb.njit(cache=True)
def _coalesce_batch(seeds, lam, ax, ay, bx, by, t_max, max_steps):
    n = seeds.shape[0]
    t = np.empty(n)
    merged = np.empty(n, np.bool_)
    steps = np.empty(n, np.int64)
    fixed = np.zeros((0, 2))
    for i in range(n):
        m, ti, _, _, s = _coalesce(0, seeds[i], np.int64(-1), lam, fixed, ax, ay, bx, by,
                                   t_max, max_steps)
        t[i] = ti
        merged[i] = m
        steps[i] = s
    return t, merged, steps


def coalescence_sample(lam: float, x: Point, y: Point, seeds, t_max: float,
                       max_steps: int = DEFAULT_MAX_STEPS):
    """Coalescing times on one independent realization per seed.

    Returns ``(t, merged, steps)`` arrays aligned with ``seeds``.
    """
    if x.x2 != y.x2:
        raise ValueError("start points must share one ordinate")
    seeds = np.asarray(seeds, dtype=np.uint64)
    return _coalesce_batch(seeds, float(lam), x.x1, x.x2, y.x1, y.x2, float(t_max),
                           int(max_steps))
