"""Renewal structure of the exploration.

For one path a renewal is a step after which the history region is empty.
For k >= 2 paths, good steps are block boundaries where G is small and the
mover line has climbed by more than kappa + 1 since the previous good step; a
good step is a renewal when the next fresh realization has exactly one point in
each big half ball below, sitting in the cone cap of the small ball above.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .exploration import C_GA, C_LA, C_N, NCOL, ExplorationState, _advance, _distinct_count
from .geometry import Point
from .ppp import FixedPpp, PppConfig, TiledPpp, _gather

__all__ = [
    "RenewalConfig",
    "GoodStep",
    "RenewalRecord",
    "RenewalChain",
    "detect_beta1",
    "detect_good_steps",
    "check_ren_event",
    "ren_probability",
    "run_renewal_chain",
    "beta1_steps",
    "z_increment_moments",
    "ZMoments",
    "write_renewals_csv",
]


@dataclass(frozen=True)
class RenewalConfig:
    k: int = 2
    kappa: float = 4.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be at least 1, got {self.k}")
        if self.k >= 2 and not self.kappa > 2 * (self.k - 1) + 1:
            raise ValueError(f"kappa must exceed {2 * (self.k - 1) + 1} for k={self.k}")


@dataclass(frozen=True)
class GoodStep:
    j: int
    n: int
    mover_ordinate: float
    G_at: float


@dataclass(frozen=True)
class RenewalRecord:
    ell: int
    gamma: int
    beta: int
    restart_points: tuple[Point, ...]
    down_points: tuple[Point, ...]
    Z: float
    mover_ordinate: float
    merged: bool = False

    def csv_row(self) -> list:
        return [self.ell, self.gamma, self.beta, self.Z, self.mover_ordinate]


def write_renewals_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ell", "gamma", "beta", "z", "mover_ordinate"])
        for r in records:
            w.writerow(r.csv_row())


# --------------------------------------------------------------------------
# stream detectors


def _as_rows(stream):
    """Normalize a state stream into (n, L, G, mover_ordinate) tuples.

    Accepts ExplorationState objects or a record array from run_exploration
    (whose rows carry the post-step values).
    """
    if isinstance(stream, np.ndarray):
        from .exploration import C_FLOOR
        for row in stream:
            yield int(row[C_N]), float(row[C_LA]), float(row[C_GA]), float(row[C_FLOOR])
        return
    for s in stream:
        yield s.n, s.L, s.G, min(p.x2 for p in s.positions)


def detect_beta1(state_stream) -> list[int]:
    """Step indices n >= 1 at which the history region is empty."""
    out = []
    for n, L, _, _ in _as_rows(state_stream):
        if n >= 1 and L == 0.0:
            out.append(n)
    return out


def detect_good_steps(state_stream, cfg: RenewalConfig, start_ordinate: float | None = None):
    """Good steps of a k >= 2 stream.

    The start line (step 0) plays the role of the zeroth good step when
    measuring ordinate progress.
    """
    if cfg.k < 2:
        raise ValueError("good steps are defined for k >= 2")
    out: list[GoodStep] = []
    last = start_ordinate
    for n, _, G, ordinate in _as_rows(state_stream):
        if last is None:
            last = ordinate
            if n == 0:
                continue
        if n % cfg.k or n == 0:
            continue
        if G <= cfg.kappa and ordinate - last > cfg.kappa + 1:
            out.append(GoodStep(len(out) + 1, n, ordinate, G))
            last = ordinate
    return out


# --------------------------------------------------------------------------
# renewal event


@nb.njit(cache=True)
def _ren_counts(mode, seed, stream, lam, fixed, xs, m2, kappa):
    """Per path: (# points in B+(g_down, kappa+1), # points in the cone cap)."""
    k = xs.shape[0]
    big = np.zeros(k, np.int64)
    cap = np.zeros(k, np.int64)
    R = kappa + 1.0
    for i in range(k):
        x = xs[i]
        pts = _gather(mode, seed, stream, lam, fixed, x - R, x + R, m2, m2 + R)
        for t in range(pts.shape[0]):
            px = pts[t, 0]
            py = pts[t, 1]
            if x - R < px < x + R and m2 < py < m2 + R:
                big[i] += 1
            dy = py - (m2 + kappa)
            dx = abs(px - x)
            if dx < 1.0 and 0.0 < dy < 1.0 and dy >= dx:
                cap[i] += 1
    return big, cap


@nb.njit(cache=True)
def _ren_holds(mode, seed, stream, lam, fixed, xs, m2, kappa):
    big, cap = _ren_counts(mode, seed, stream, lam, fixed, xs, m2, kappa)
    for i in range(xs.shape[0]):
        if big[i] != 1 or cap[i] != 1:
            return False
    return True


def _projections(state: ExplorationState, kappa: float):
    m2 = min(p.x2 for p in state.positions)
    down = tuple(Point(p.x1, m2) for p in state.positions)
    up = tuple(Point(p.x1, m2 + kappa) for p in state.positions)
    return down, up


def check_ren_event(good: GoodStep | None, state: ExplorationState, fresh_next,
                    cfg: RenewalConfig) -> bool:
    """Renewal event at a good step, read off the next fresh realization."""
    if good is not None and good.n != state.n:
        raise ValueError("good step and state refer to different steps")
    m2 = min(p.x2 for p in state.positions)
    xs = np.array([p.x1 for p in state.positions], dtype=float)
    return bool(_ren_holds(*fresh_next.source(), xs, m2, float(cfg.kappa)))


def ren_probability(lam: float, kappa: float, k: int = 2) -> float:
    """Event probability for paths whose big balls are pairwise disjoint.

    Per path: no point in the big ball outside the cap (area 2(kappa+1)^2 - 1)
    and exactly one point in the cap (area 1).
    """
    per = lam * math.exp(-lam * 2.0 * (kappa + 1.0) ** 2)
    return per**k


# --------------------------------------------------------------------------
# chains


@nb.njit(cache=True)
def _beta1_run(seed, lam, x, y, n_steps):
    """k=1 auxiliary run; returns the steps after which the history is empty."""
    from_mode = 0
    pos = np.empty((1, 2))
    pos[0, 0] = x
    pos[0, 1] = y
    rects = np.empty((8, 4))
    nrect = 0
    rec = np.empty(NCOL)
    fixed = np.zeros((0, 2))
    out = np.empty(1024, np.int64)
    c = 0
    for n in range(n_steps):
        rects, nrect = _advance(from_mode, seed, n + 1, lam, fixed, False, n, pos, rects,
                                nrect, rec)
        if nrect == 0:
            if c == out.shape[0]:
                grown = np.empty(2 * c, np.int64)
                grown[:c] = out[:c]
                out = grown
            out[c] = n + 1
            c += 1
    return out[:c]


def beta1_steps(config: PppConfig, n_steps: int, start: Point = Point(0.0, 0.0)) -> np.ndarray:
    """Renewal steps of a single auxiliary path over ``n_steps`` steps."""
    return _beta1_run(np.uint64(config.seed), float(config.lam), start.x1, start.x2,
                      int(n_steps))


@nb.njit(cache=True)
def _chain(mode, seed, lam, fixed, pos, kappa, budget):
    k = pos.shape[0]
    rects = np.empty((16, 4))
    nrect = 0
    rec = np.empty(NCOL)
    good = np.empty((256, 3))  # n, ordinate, G
    ng = 0
    ren = np.empty((256, 5 + 2 * k))  # gamma, beta, ordinate, merged, z, xs..., ys...
    nr = 0
    last = pos[0, 1]
    for i in range(k):
        last = min(last, pos[i, 1])
    merged = False
    n = 0
    while n < budget:
        if n > 0 and n % k == 0:
            m2 = pos[0, 1]
            for i in range(k):
                m2 = min(m2, pos[i, 1])
            top = -np.inf
            bot = np.inf
            for r in range(nrect):
                top = max(top, rects[r, 3])
                bot = min(bot, rects[r, 2])
            L = top - bot if nrect > 0 else 0.0
            G = L + 2.0 * (_distinct_count(pos) - 1)
            if G <= kappa and m2 - last > kappa + 1.0:
                if ng == good.shape[0]:
                    g2 = np.empty((2 * ng, 3))
                    g2[:ng] = good[:ng]
                    good = g2
                good[ng, 0] = n
                good[ng, 1] = m2
                good[ng, 2] = G
                ng += 1
                last = m2
                xs = pos[:, 0].copy()
                if _ren_holds(mode, seed, n + 1, lam, fixed, xs, m2, kappa):
                    if nr == ren.shape[0]:
                        r2 = np.empty((2 * nr, ren.shape[1]))
                        r2[:nr] = ren[:nr]
                        ren = r2
                    ren[nr, 0] = ng
                    ren[nr, 1] = n
                    ren[nr, 2] = m2
                    ren[nr, 3] = 0.0
                    ren[nr, 4] = xs[k - 1] - xs[0] if k >= 2 else 0.0
                    for i in range(k):
                        ren[nr, 5 + i] = xs[i]
                        ren[nr, 5 + k + i] = m2
                    nr += 1
        rects, nrect = _advance(mode, seed, n + 1, lam, fixed, False, n, pos, rects,
                                nrect, rec)
        n += 1
        if k >= 2 and _distinct_count(pos) == 1:
            merged = True
            break
    if merged:
        if nr == ren.shape[0]:
            r2 = np.empty((nr + 1, ren.shape[1]))
            r2[:nr] = ren[:nr]
            ren = r2
        m2 = pos[0, 1]
        ren[nr, 0] = ng
        ren[nr, 1] = n
        ren[nr, 2] = m2
        ren[nr, 3] = 1.0
        ren[nr, 4] = 0.0
        for i in range(k):
            ren[nr, 5 + i] = pos[i, 0]
            ren[nr, 5 + k + i] = m2
        nr += 1
    return good[:ng], ren[:nr], merged, n


@dataclass
class RenewalChain:
    records: list[RenewalRecord]
    good_steps: list[GoodStep]
    merged: bool
    steps_used: int
    budget_exhausted: bool
    kappa: float = field(default=4.0)

    def beta_gaps(self) -> np.ndarray:
        betas = [r.beta for r in self.records if not r.merged]
        return np.diff(np.asarray(betas, dtype=np.int64))

    def good_gaps(self) -> np.ndarray:
        return np.diff(np.asarray([0] + [g.n for g in self.good_steps], dtype=np.int64))


def run_renewal_chain(starts, cfg: RenewalConfig, budget: int,
                      config: PppConfig | None = None,
                      fixed: FixedPpp | None = None) -> RenewalChain:
    """Drive the auxiliary exploration of two paths and collect renewals.

    If the paths merge, the chain stops with a final record carrying Z = 0.
    """
    starts = [p if isinstance(p, Point) else Point(*p) for p in starts]
    if cfg.k != len(starts) or cfg.k < 2:
        raise ValueError("run_renewal_chain needs k >= 2 start points matching cfg.k")
    if len({p.x2 for p in starts}) != 1:
        raise ValueError("start points must share one ordinate")
    if fixed is not None:
        mode, seed, _, lam, fx = fixed.source()
    else:
        mode, seed, _, lam, fx = TiledPpp(config).source()
    pos = np.array([p.as_tuple() for p in sorted(starts, key=lambda p: p.x1)], dtype=float)
    good, ren, merged, steps = _chain(mode, seed, lam, fx, pos, float(cfg.kappa), int(budget))
    k = cfg.k
    goods = [GoodStep(j + 1, int(g[0]), float(g[1]), float(g[2])) for j, g in enumerate(good)]
    recs = []
    for ell, row in enumerate(ren):
        m2 = float(row[2])
        xs = [float(v) for v in row[5:5 + k]]
        recs.append(RenewalRecord(
            ell=ell,
            gamma=int(row[0]),
            beta=int(row[1]),
            restart_points=tuple(Point(x, m2 + cfg.kappa) for x in xs),
            down_points=tuple(Point(x, m2) for x in xs),
            Z=float(row[4]),
            mover_ordinate=m2,
            merged=bool(row[3]),
        ))
    return RenewalChain(recs, goods, bool(merged), int(steps),
                        budget_exhausted=not merged and steps >= budget, kappa=cfg.kappa)


# --------------------------------------------------------------------------
# Z process


@dataclass(frozen=True)
class ZMoments:
    threshold: float
    count: int
    mean: float
    second: float
    third_abs: float
    third_abs_halves: tuple[float, float]
    insufficient: bool

    @property
    def third_abs_half_ratio(self) -> float:
        a, b = self.third_abs_halves
        if not (a > 0 and b > 0):
            return math.inf
        return max(a, b) / min(a, b) - 1.0


def z_increment_moments(records, thresholds, min_records: int = 1000) -> list[ZMoments]:
    """Moments of Z increments, stratified by Z_ell > threshold.

    Accepts RenewalRecords or a plain sequence of Z values.  Fewer than
    ``min_records`` records sets the ``insufficient`` flag on every stratum.
    """
    z = np.array([r.Z if isinstance(r, RenewalRecord) else float(r) for r in records])
    short = z.size < min_records
    inc = np.diff(z)
    base = z[:-1]
    out = []
    for thr in thresholds:
        sel = inc[base > thr]
        if sel.size == 0:
            out.append(ZMoments(thr, 0, math.nan, math.nan, math.nan, (math.nan, math.nan), True))
            continue
        h = sel.size // 2
        halves = (float(np.mean(np.abs(sel[:h]) ** 3)) if h else math.nan,
                  float(np.mean(np.abs(sel[h:]) ** 3)))
        out.append(ZMoments(
            threshold=float(thr),
            count=int(sel.size),
            mean=float(sel.mean()),
            second=float(np.mean(sel**2)),
            third_abs=float(np.mean(np.abs(sel) ** 3)),
            third_abs_halves=halves,
            insufficient=short or sel.size < min_records,
        ))
    return out
