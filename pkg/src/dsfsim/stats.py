"""Estimators and oracles: survival curves with Wilson intervals, log-log slope
fits, two-sample KS and rasterization of history regions."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats as _st

from .geometry import HistoryRegion

__all__ = [
    "TailEstimate",
    "SlopeFit",
    "wilson_interval",
    "survival_curve",
    "loglog_slope",
    "two_sample_ks",
    "rasterize_region",
    "decay_ratios",
    "MIN_SURVIVING",
]

MIN_SURVIVING = 50
_Z95 = 1.959963984540054


def wilson_interval(k: int, n: int, z: float = _Z95) -> tuple[float, float]:
    """Wilson score interval for k successes out of n."""
    if n <= 0:
        raise ValueError("n must be positive")
    p = k / n
    den = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    # the bounds are exactly 0 and 1 at the extremes; avoid rounding past p
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


@dataclass(frozen=True)
class TailEstimate:
    grid: tuple[float, ...]
    survival: tuple[float, ...]
    ci_lo: tuple[float, ...]
    ci_hi: tuple[float, ...]
    n_samples: int
    n_censored: int
    n_surviving: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "survival", "ci_lo", "ci_hi"])
            for row in zip(self.grid, self.survival, self.ci_lo, self.ci_hi):
                w.writerow(row)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float
    grid_used: tuple[float, ...]

    def to_dict(self) -> dict:
        return asdict(self)


def survival_curve(samples, grid) -> TailEstimate:
    """Empirical P(T > t) on ``grid``.

    ``samples`` holds (value, censored) pairs or bare values.  A censored value
    counts as exceeding every grid point (the run had not ended when it was
    stopped), which can only overstate survival.
    """
    vals, cens = [], []
    for s in samples:
        if isinstance(s, tuple):
            vals.append(float(s[0]))
            cens.append(bool(s[1]))
        else:
            vals.append(float(s))
            cens.append(False)
    if not vals:
        raise ValueError("no samples")
    grid = [float(t) for t in grid]
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be sorted")
    v = np.asarray(vals)
    c = np.asarray(cens)
    n = v.size
    surv, lo, hi, alive = [], [], [], []
    for t in grid:
        k = int(np.count_nonzero(c | (v > t)))
        a, b = wilson_interval(k, n)
        surv.append(k / n)
        lo.append(a)
        hi.append(b)
        alive.append(k)
    return TailEstimate(tuple(grid), tuple(surv), tuple(lo), tuple(hi), n, int(c.sum()),
                        tuple(alive))


def loglog_slope(est, grid=None, min_surviving: int = MIN_SURVIVING) -> SlopeFit:
    """Least squares slope of log survival against log t.

    Accepts a TailEstimate (points with fewer than ``min_surviving`` surviving
    samples are dropped) or a bare survival sequence with an explicit grid.
    """
    if isinstance(est, TailEstimate):
        t = np.asarray(est.grid)
        s = np.asarray(est.survival)
        keep = np.asarray(est.n_surviving) >= min_surviving
        t, s = t[keep], s[keep]
    else:
        t = np.asarray(grid, dtype=float)
        s = np.asarray(est, dtype=float)
    keep = (s > 0) & (t > 0)
    t, s = t[keep], s[keep]
    if t.size < 3 or np.unique(t).size < 3:
        raise ValueError("need at least 3 usable grid points")
    res = _st.linregress(np.log(t), np.log(s))
    return SlopeFit(float(res.slope), float(res.intercept), float(res.rvalue**2),
                    tuple(float(x) for x in t))


def two_sample_ks(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    return float(_st.ks_2samp(a, b).statistic)


def rasterize_region(H: HistoryRegion, resolution: float) -> tuple[float, float]:
    """Grid-counted (area, height) of a union of open rectangles.

    Cells are tested at their centres over the bounding box.
    """
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    if H.is_empty:
        return 0.0, 0.0
    arr = H.as_array()
    x0, x1 = arr[:, 0].min(), arr[:, 1].max()
    y0, y1 = arr[:, 2].min(), arr[:, 3].max()
    xs = x0 + (np.arange(max(1, math.ceil((x1 - x0) / resolution))) + 0.5) * resolution
    ys = y0 + (np.arange(max(1, math.ceil((y1 - y0) / resolution))) + 0.5) * resolution
    covered = np.zeros((ys.size, xs.size), dtype=bool)
    for lo1, hi1, lo2, hi2 in arr:
        cx = (xs > lo1) & (xs < hi1)
        cy = (ys > lo2) & (ys < hi2)
        covered |= np.outer(cy, cx)
    area = float(covered.sum()) * resolution * resolution
    rows = np.flatnonzero(covered.any(axis=1))
    if rows.size == 0:
        return area, 0.0
    height = float((rows[-1] - rows[0] + 1) * resolution)
    return area, height


def decay_ratios(survival) -> list[float]:
    """Successive ratios S(t_{i+1}) / S(t_i) (nan where S(t_i) = 0)."""
    s = list(survival)
    return [b / a if a > 0 else math.nan for a, b in zip(s, s[1:])]
