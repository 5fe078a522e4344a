import numpy as np
import pytest

from dsfsim.geometry import Point


def brute_nearest(points, origin, rects=(), extra=()):
    """Exhaustive l-inf argmin above ``origin`` with (d, y, x) tie-breaking."""
    best = None
    cands = [(float(x), float(y), False) for x, y in points]
    cands += [(float(x), float(y), True) for x, y in extra]
    for x, y, is_extra in cands:
        if not y > origin.x2:
            continue
        if not is_extra and any(a < x < b and c < y < d for a, b, c, d in rects):
            continue
        key = (max(abs(x - origin.x1), y - origin.x2), y, x)
        if best is None or key < best:
            best = key
    return None if best is None else Point(best[2], best[1])


def raster_area(rects, lo1, hi1, lo2, hi2, res):
    """Area of a union of open rectangles counted on cell centres."""
    xs = lo1 + (np.arange(int(round((hi1 - lo1) / res))) + 0.5) * res
    ys = lo2 + (np.arange(int(round((hi2 - lo2) / res))) + 0.5) * res
    cov = np.zeros((ys.size, xs.size), dtype=bool)
    for a, b, c, d in rects:
        cov |= np.outer((ys > c) & (ys < d), (xs > a) & (xs < b))
    return cov.sum() * res * res


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
