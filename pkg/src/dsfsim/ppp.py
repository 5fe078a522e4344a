"""Homogeneous Poisson point process realizations on the whole plane.

A realization is generated lazily on square tiles ``[i s, (i+1) s) x [j s, (j+1) s)``
of side ``s = max(1, lam**-0.5)``, so a tile holds at least one point on
average and a search touches few tiles however sparse the process is.  Every tile draws from its own stream, keyed by a SplitMix64 mix of
``(seed, stream, i, j)``, so the points of a tile never depend on the order
in which tiles are visited.  :class:`TiledPpp` is the single global
realization (stream ``GLOBAL_STREAM``); :class:`FreshPpp` is the independent
realization used by step ``n`` of the auxiliary exploration (stream ``n``).
:class:`FixedPpp` wraps an explicit finite point set for hand-built fixtures.

Hot loops (nearest-point search, strip scans) are numba kernels taking the
realization as a flat ``(mode, seed, stream, lam, fixed)`` tuple.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numba as nb
import numpy as np

from .geometry import HistoryRegion, Point, Rect

__all__ = [
    "PppConfig",
    "TiledPpp",
    "FreshPpp",
    "FixedPpp",
    "SearchCapError",
    "SEARCH_CAP",
    "GLOBAL_STREAM",
    "points_in_rect",
    "nearest_upper",
    "void_probability_check",
    "child_seed",
]

GLOBAL_STREAM = -1
MODE_TILED = 0
MODE_FIXED = 1
SEARCH_CAP = float(2**20)

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


class SearchCapError(RuntimeError):
    """Expanding search exceeded the hard radius cap (or a finite realization ran out)."""


@dataclass(frozen=True)
class PppConfig:
    lam: float
    seed: int

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"intensity must be positive, got {self.lam}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")


def child_seed(master: int, index: int) -> int:
    """Seed of replication ``index`` derived from a master seed."""
    ss = np.random.SeedSequence([int(master), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# --------------------------------------------------------------------------
# numba kernels


@nb.njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(cache=True)
def _tile_key(seed, stream, i, j):
    h = _mix64(np.uint64(seed) + _GOLDEN)
    h = _mix64(h ^ np.uint64(stream))
    h = _mix64(h ^ np.uint64(i) * _GOLDEN)
    h = _mix64(h ^ np.uint64(j))
    return h


@nb.njit(cache=True)
def _tile_side(lam):
    return 1.0 if lam >= 1.0 else 1.0 / math.sqrt(lam)


@nb.njit(cache=True)
def _tile_fill(seed, stream, lam, i, j, buf, n):
    """Append the points of tile (i, j) to ``buf[n:]``; returns (buf, new n)."""
    side = _tile_side(lam)
    mean = lam * side * side
    s = _tile_key(seed, stream, i, j)
    s += _GOLDEN
    u = (_mix64(s) >> _S11) * _INV53
    # Poisson(mean) by inversion
    k = 0
    p = math.exp(-mean)
    cdf = p
    while u > cdf and p > 0.0:
        k += 1
        p *= mean / k
        cdf += p
    if n + k > buf.shape[0]:
        nb_ = np.empty((2 * (n + k) + 16, 2))
        nb_[:n] = buf[:n]
        buf = nb_
    for t in range(k):
        s += _GOLDEN
        buf[n, 0] = (i + (_mix64(s) >> _S11) * _INV53) * side
        s += _GOLDEN
        buf[n, 1] = (j + (_mix64(s) >> _S11) * _INV53) * side
        n += 1
    return buf, n


@nb.njit(cache=True)
def _gather(mode, seed, stream, lam, fixed, xlo, xhi, ylo, yhi):
    """Realization points in a superset of the closed window [xlo,xhi]x[ylo,yhi]."""
    if mode == MODE_FIXED:
        cnt = 0
        out = np.empty((fixed.shape[0], 2))
        for t in range(fixed.shape[0]):
            x = fixed[t, 0]
            y = fixed[t, 1]
            if xlo <= x <= xhi and ylo <= y <= yhi:
                out[cnt, 0] = x
                out[cnt, 1] = y
                cnt += 1
        return out[:cnt]
    side = _tile_side(lam)
    i0 = int(math.floor(xlo / side))
    i1 = int(math.floor(xhi / side))
    j0 = int(math.floor(ylo / side))
    j1 = int(math.floor(yhi / side))
    ntiles = (i1 - i0 + 1) * (j1 - j0 + 1)
    buf = np.empty((int(ntiles * lam * side * side * 1.5) + 16, 2))
    n = 0
    for i in range(i0, i1 + 1):
        for j in range(j0, j1 + 1):
            buf, n = _tile_fill(seed, stream, lam, i, j, buf, n)
    return buf[:n]


@nb.njit(cache=True)
def _in_rects(x, y, rects, nrect):
    for r in range(nrect):
        if rects[r, 0] < x < rects[r, 1] and rects[r, 2] < y < rects[r, 3]:
            return True
    return False


@nb.njit(cache=True, inline="always")
def _better(d, y, x, bd, by, bx):
    if d != bd:
        return d < bd
    if y != by:
        return y < by
    return x < bx


@nb.njit(cache=True)
def _fixed_covered(fixed, xlo, xhi, yhi):
    """True when the window already spans every fixed point (nothing left to find)."""
    for t in range(fixed.shape[0]):
        if fixed[t, 0] < xlo or fixed[t, 0] > xhi or fixed[t, 1] > yhi:
            return False
    return True


@nb.njit(cache=True)
def _nearest(mode, seed, stream, lam, fixed, fx, fy, rects, nrect, extra, nextra):
    """l-inf nearest point strictly above (fx, fy).

    Candidates are realization points outside the open rectangles ``rects[:nrect]``
    plus ``extra[:nextra]``.  Returns (x, y, dist, extra_index or -1).
    Ties are broken by (ordinate, abscissa).
    """
    bd = np.inf
    by = np.inf
    bx = np.inf
    bsrc = -1
    for e in range(nextra):
        ex = extra[e, 0]
        ey = extra[e, 1]
        dy = ey - fy
        if dy <= 0.0:
            continue
        d = max(abs(ex - fx), dy)
        if _better(d, ey, ex, bd, by, bx):
            bd = d
            by = ey
            bx = ex
            bsrc = e
    r = 1.0
    while True:
        pts = _gather(mode, seed, stream, lam, fixed, fx - r, fx + r, fy, fy + r)
        for t in range(pts.shape[0]):
            px = pts[t, 0]
            py = pts[t, 1]
            dy = py - fy
            if dy <= 0.0:
                continue
            d = max(abs(px - fx), dy)
            if _better(d, py, px, bd, by, bx) and not _in_rects(px, py, rects, nrect):
                bd = d
                by = py
                bx = px
                bsrc = -1
        if bd < r:
            return bx, by, bd, bsrc
        if mode == MODE_FIXED and _fixed_covered(fixed, fx - r, fx + r, fy + r):
            if bd < np.inf:
                return bx, by, bd, bsrc
            raise SearchCapError("finite realization has no point above the query")
        r *= 2.0
        if r > SEARCH_CAP:
            raise SearchCapError("nearest-point search exceeded the radius cap")


@nb.njit(cache=True)
def _strip_min_dx(mode, seed, stream, lam, fixed, cx, y0):
    """min |x - cx| over realization points with y0 <= y <= y0 + 1 (inf if none)."""
    w = 1.0
    while True:
        pts = _gather(mode, seed, stream, lam, fixed, cx - w, cx + w, y0, y0 + 1.0)
        best = np.inf
        for t in range(pts.shape[0]):
            py = pts[t, 1]
            if y0 <= py <= y0 + 1.0:
                dx = abs(pts[t, 0] - cx)
                if dx < best:
                    best = dx
        if best <= w:
            return best
        if mode == MODE_FIXED:
            done = True
            for t in range(fixed.shape[0]):
                if fixed[t, 0] < cx - w or fixed[t, 0] > cx + w:
                    done = False
                    break
            if done:
                return np.inf
        w *= 2.0
        if w > SEARCH_CAP:
            raise SearchCapError("strip search exceeded the radius cap")


@nb.njit(cache=True)
def _min_linf_in_box(mode, seed, stream, lam, fixed, fx, fy, xlo, xhi, ylo, yhi, rects, nrect):
    """Nearest (l-inf from (fx, fy)) realization point in a closed box, skipping rects."""
    pts = _gather(mode, seed, stream, lam, fixed, xlo, xhi, ylo, yhi)
    best = np.inf
    for t in range(pts.shape[0]):
        px = pts[t, 0]
        py = pts[t, 1]
        if xlo <= px <= xhi and ylo <= py <= yhi and not _in_rects(px, py, rects, nrect):
            d = max(abs(px - fx), abs(py - fy))
            if d < best:
                best = d
    return best


@nb.njit(cache=True)
def _void_frequency(seed, lam, half_width, reps):
    empty = 0
    for rep in range(reps):
        pts = _gather(MODE_TILED, seed, rep, lam, np.zeros((0, 2)),
                      -half_width, half_width, 0.0, 1.0)
        hit = False
        for t in range(pts.shape[0]):
            if -half_width <= pts[t, 0] <= half_width and 0.0 <= pts[t, 1] <= 1.0:
                hit = True
                break
        if not hit:
            empty += 1
    return empty / reps


# --------------------------------------------------------------------------
# Python-facing realizations

_NO_FIXED = np.zeros((0, 2))


class _Realization:
    mode = MODE_TILED
    stream = GLOBAL_STREAM

    def __init__(self, config: PppConfig):
        self.config = config
        self._cache: dict[tuple[int, int], np.ndarray] = {}
        self._lock = threading.Lock()

    def source(self):
        return (self.mode, np.uint64(self.config.seed), np.int64(self.stream),
                float(self.config.lam), _NO_FIXED)

    def tile(self, i: int, j: int) -> np.ndarray:
        key = (int(i), int(j))
        pts = self._cache.get(key)
        if pts is None:
            with self._lock:
                pts = self._cache.get(key)
                if pts is None:
                    buf, n = _tile_fill(np.uint64(self.config.seed), np.int64(self.stream),
                                        float(self.config.lam), key[0], key[1],
                                        np.empty((8, 2)), 0)
                    pts = buf[:n].copy()
                    pts.setflags(write=False)
                    self._cache[key] = pts
        return pts

    def points_in_rect(self, window: Rect) -> np.ndarray:
        return points_in_rect(self, window)


class TiledPpp(_Realization):
    """The single global realization, cached tile by tile."""


class FreshPpp(_Realization):
    """Independent realization number ``n`` (fresh PPP of the auxiliary process)."""

    def __init__(self, config: PppConfig, n: int):
        if n < 0:
            raise ValueError("fresh realizations are indexed by n >= 0")
        super().__init__(config)
        self.n = int(n)
        self.stream = self.n


class FixedPpp:
    """An explicit finite point set standing in for a realization."""

    mode = MODE_FIXED

    def __init__(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        self.points = pts.copy()
        self.points.setflags(write=False)

    def source(self):
        return (self.mode, np.uint64(0), np.int64(0), 1.0, np.ascontiguousarray(self.points))

    def points_in_rect(self, window: Rect) -> np.ndarray:
        return points_in_rect(self, window)


def _window_mask(pts: np.ndarray, w: Rect) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    m = (w.lo1 <= x) if w.closed_lo1 else (w.lo1 < x)
    m &= (x <= w.hi1) if w.closed_hi1 else (x < w.hi1)
    m &= (w.lo2 <= y) if w.closed_lo2 else (w.lo2 < y)
    m &= (y <= w.hi2) if w.closed_hi2 else (y < w.hi2)
    return m


def points_in_rect(ppp, window: Rect) -> np.ndarray:
    """All realization points inside ``window`` as an (n, 2) array."""
    if not all(map(math.isfinite, (window.lo1, window.hi1, window.lo2, window.hi2))):
        raise ValueError("window must be bounded")
    if window.is_empty:
        return np.zeros((0, 2))
    if isinstance(ppp, FixedPpp):
        pts = ppp.points
        return pts[_window_mask(pts, window)]
    side = _tile_side(ppp.config.lam)
    i0, i1 = math.floor(window.lo1 / side), math.floor(window.hi1 / side)
    j0, j1 = math.floor(window.lo2 / side), math.floor(window.hi2 / side)
    if (i1 - i0 + 1) * (j1 - j0 + 1) > 4096:
        # tiles are pure functions of their key, so bypassing the cache is consistent
        pts = _gather(*ppp.source(), window.lo1, window.hi1, window.lo2, window.hi2)
    else:
        tiles = [ppp.tile(i, j) for i in range(i0, i1 + 1) for j in range(j0, j1 + 1)]
        pts = np.concatenate(tiles) if tiles else np.zeros((0, 2))
    return pts[_window_mask(pts, window)]


def nearest_upper(ppp, origin: Point, forbidden: HistoryRegion | None = None,
                  extra=()) -> Point:
    """l-inf nearest candidate with strictly larger ordinate.

    Candidates are realization points outside ``forbidden`` together with the
    ``extra`` points; the search is exact.
    """
    rects = forbidden.as_array() if forbidden is not None else np.zeros((0, 4))
    ex = np.array([p.as_tuple() if isinstance(p, Point) else p for p in extra],
                  dtype=float).reshape(-1, 2)
    x, y, _, _ = _nearest(*ppp.source(), origin.x1, origin.x2, rects, rects.shape[0],
                          ex, ex.shape[0])
    return Point(x, y)


def void_probability_check(lam: float, l: float, reps: int = 100_000, seed: int = 0) -> float:
    """Monte Carlo frequency of an empty strip [-l, l] x [0, 1]."""
    if l < 0:
        raise ValueError("half width must be non-negative")
    if l == 0:
        return 1.0
    return float(_void_frequency(np.uint64(seed), float(lam), float(l), int(reps)))
