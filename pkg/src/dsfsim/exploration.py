"""Joint exploration of k DSF paths moved in tandem.

The lowest tip moves; every other distinct tip is a stay vertex.  The history
region is the union of explored upper half balls clipped above the current
lowest ordinate.  Two variants share one step kernel:

* auxiliary: step ``n -> n+1`` draws the ancestor from the fresh realization
  number ``n+1`` outside the history, with stay vertices as extra targets;
* original: the ancestor comes from the single global realization.

Each step also records the quantities the dominating chains consume: up/top
classification, the side-box event ``E`` and the strip width ``R``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .geometry import HistoryRegion, Point, Rect, region_height
from .ppp import (
    GLOBAL_STREAM,
    FixedPpp,
    FreshPpp,
    PppConfig,
    TiledPpp,
    _min_linf_in_box,
    _nearest,
    _strip_min_dx,
)

__all__ = [
    "ExplorationState",
    "StepRecord",
    "init",
    "step_auxiliary",
    "step_original",
    "classify_top",
    "compute_R",
    "detect_E_event",
    "inject_history",
    "run_exploration",
    "records_from_array",
    "write_records_csv",
    "R_UNBOUNDED",
    "sample_from_state",
    "small_ball_up_frequency",
]

# record columns
(C_N, C_MX, C_MY, C_AX, C_AY, C_CONN, C_UP, C_TOP, C_E, C_R, C_RP, C_LB, C_LA,
 C_GA, C_STAY, C_FLOOR, C_D, C_D1, C_D2) = range(19)
NCOL = 19

# R when a finite fixture has no point in the strip at all
R_UNBOUNDED = 2**62

CSV_FIELDS = ["n", "mover_x", "mover_y", "anc_x", "anc_y", "is_up", "is_top", "E",
              "R", "L", "G", "stay_count"]


# --------------------------------------------------------------------------
# kernels


@nb.njit(cache=True)
def _classify_top(k, is_up, conn, d, dy, L):
    if k == 1:
        return is_up and d >= 1.0
    if conn:
        return d <= L + 0.5
    return is_up and 1.0 <= dy <= L + 0.5


@nb.njit(cache=True)
def _height(rects, nrect):
    if nrect == 0:
        return 0.0
    top = -np.inf
    bot = np.inf
    for r in range(nrect):
        top = max(top, rects[r, 3])
        bot = min(bot, rects[r, 2])
    return top - bot


@nb.njit(cache=True)
def _mover_index(pos):
    m = 0
    for i in range(1, pos.shape[0]):
        if pos[i, 1] < pos[m, 1] or (pos[i, 1] == pos[m, 1] and pos[i, 0] < pos[m, 0]):
            m = i
    return m


@nb.njit(cache=True)
def _distinct_count(pos):
    c = 0
    for i in range(pos.shape[0]):
        seen = False
        for j in range(i):
            if pos[j, 0] == pos[i, 0] and pos[j, 1] == pos[i, 1]:
                seen = True
                break
        if not seen:
            c += 1
    return c


@nb.njit(cache=True)
def _stay_points(pos, mx, my):
    out = np.empty((pos.shape[0], 2))
    c = 0
    for i in range(pos.shape[0]):
        if pos[i, 0] == mx and pos[i, 1] == my:
            continue
        dup = False
        for j in range(c):
            if out[j, 0] == pos[i, 0] and out[j, 1] == pos[i, 1]:
                dup = True
                break
        if not dup:
            out[c, 0] = pos[i, 0]
            out[c, 1] = pos[i, 1]
            c += 1
    return out, c


@nb.njit(cache=True)
def _e_distances(mode, seed, stream, lam, fixed, mx, my, L, rects, nrect):
    """(d1, d2): nearest fresh point in the side boxes / in the strip above."""
    d1 = min(
        _min_linf_in_box(mode, seed, stream, lam, fixed, mx, my,
                         mx + L, mx + L + 1.0, my, my + 1.0, rects, nrect),
        _min_linf_in_box(mode, seed, stream, lam, fixed, mx, my,
                         mx - L - 1.0, mx - L, my, my + 1.0, rects, nrect),
    )
    d2 = _min_linf_in_box(mode, seed, stream, lam, fixed, mx, my,
                          mx - L - 1.0, mx + L + 1.0, my + L, my + L + 1.0, rects, 0)
    return d1, d2


@nb.njit(cache=True)
def _r_from_width(rp):
    if rp == np.inf:
        return float(R_UNBOUNDED)
    return math.floor(rp) + 1.0


@nb.njit(cache=True)
def _advance(mode, seed, stream, lam, fixed, original, n, pos, rects, nrect, rec):
    """One tandem step in place on ``pos``/``rects``; fills ``rec`` and returns
    the (possibly reallocated) rects array and its new length."""
    k = pos.shape[0]
    mi = _mover_index(pos)
    mx = pos[mi, 0]
    my = pos[mi, 1]
    stay, nstay = _stay_points(pos, mx, my)
    L = _height(rects, nrect)

    if original:
        ax, ay, d, _ = _nearest(mode, seed, stream, lam, fixed, mx, my, rects, 0, stay, 0)
    else:
        ax, ay, d, _ = _nearest(mode, seed, stream, lam, fixed, mx, my, rects, nrect,
                                stay, nstay)
    conn = False
    for s in range(nstay):
        if stay[s, 0] == ax and stay[s, 1] == ay:
            conn = True
    dy = ay - my
    is_up = dy == max(abs(ax - mx), dy)
    is_top = _classify_top(k, is_up, conn, d, dy, L)

    rp = _strip_min_dx(mode, seed, stream, lam, fixed, mx, my + L)
    d1, d2 = _e_distances(mode, seed, stream, lam, fixed, mx, my, L, rects, nrect)

    for i in range(k):
        if pos[i, 0] == mx and pos[i, 1] == my:
            pos[i, 0] = ax
            pos[i, 1] = ay
    floor = pos[0, 1]
    for i in range(1, k):
        floor = min(floor, pos[i, 1])

    if nrect + 1 > rects.shape[0]:
        grown = np.empty((2 * rects.shape[0] + 8, 4))
        grown[:nrect] = rects[:nrect]
        rects = grown
    # the ancestor sits on the ball boundary; snap that side to it exactly
    rects[nrect, 0] = ax if mx - ax == d else mx - d
    rects[nrect, 1] = ax if ax - mx == d else mx + d
    rects[nrect, 2] = my
    rects[nrect, 3] = ay if is_up else my + d
    nrect += 1
    kept = 0
    for r in range(nrect):
        if rects[r, 3] > floor:
            rects[kept, 0] = rects[r, 0]
            rects[kept, 1] = rects[r, 1]
            rects[kept, 2] = max(rects[r, 2], floor)
            rects[kept, 3] = rects[r, 3]
            kept += 1
    nrect = kept

    L_after = _height(rects, nrect)
    stay_after = _distinct_count(pos) - 1
    rec[C_N] = n + 1
    rec[C_MX] = mx
    rec[C_MY] = my
    rec[C_AX] = ax
    rec[C_AY] = ay
    rec[C_CONN] = conn
    rec[C_UP] = is_up
    rec[C_TOP] = is_top
    rec[C_E] = d1 < d2
    rec[C_R] = _r_from_width(rp)
    rec[C_RP] = rp
    rec[C_LB] = L
    rec[C_LA] = L_after
    rec[C_GA] = L_after + 2.0 * stay_after
    rec[C_STAY] = stay_after
    rec[C_FLOOR] = floor
    rec[C_D] = d
    rec[C_D1] = d1
    rec[C_D2] = d2
    return rects, nrect


@nb.njit(cache=True)
def _run(mode, seed, lam, fixed, original, pos, rects, nrect, n0, n_steps):
    out = np.empty((n_steps, NCOL))
    for t in range(n_steps):
        n = n0 + t
        stream = GLOBAL_STREAM if original else n + 1
        rects, nrect = _advance(mode, seed, stream, lam, fixed, original, n, pos,
                                rects, nrect, out[t])
    return out, rects, nrect


# --------------------------------------------------------------------------
# Python API


@dataclass(frozen=True)
class ExplorationState:
    n: int
    positions: tuple[Point, ...]
    history: HistoryRegion
    mover_index: int
    stay_count: int
    L: float
    G: float

    @property
    def k(self) -> int:
        return len(self.positions)

    @property
    def mover(self) -> Point:
        return self.positions[self.mover_index]

    def stay_vertices(self) -> list[Point]:
        m = self.mover
        out: list[Point] = []
        for p in self.positions:
            if p != m and p not in out:
                out.append(p)
        return out

    def pos_array(self) -> np.ndarray:
        return np.array([p.as_tuple() for p in self.positions], dtype=float)


@dataclass(frozen=True)
class StepRecord:
    n: int
    mover_before: Point
    ancestor: Point
    connected_to_stay: bool
    is_up: bool
    is_top: bool
    E_event: bool
    R: int
    L_before: float
    L_after: float
    G_after: float
    stay_count: int
    R_prime: float = math.inf
    d1: float = math.inf
    d2: float = math.inf

    @classmethod
    def from_row(cls, row) -> "StepRecord":
        return cls(
            n=int(row[C_N]),
            mover_before=Point(row[C_MX], row[C_MY]),
            ancestor=Point(row[C_AX], row[C_AY]),
            connected_to_stay=bool(row[C_CONN]),
            is_up=bool(row[C_UP]),
            is_top=bool(row[C_TOP]),
            E_event=bool(row[C_E]),
            R=int(row[C_R]),
            L_before=float(row[C_LB]),
            L_after=float(row[C_LA]),
            G_after=float(row[C_GA]),
            stay_count=int(row[C_STAY]),
            R_prime=float(row[C_RP]),
            d1=float(row[C_D1]),
            d2=float(row[C_D2]),
        )

    @property
    def step_length(self) -> float:
        return self.mover_before.linf(self.ancestor)

    def csv_row(self) -> list:
        return [self.n, self.mover_before.x1, self.mover_before.x2, self.ancestor.x1,
                self.ancestor.x2, int(self.is_up), int(self.is_top), int(self.E_event),
                self.R, self.L_after, self.G_after, self.stay_count]


def _state(n: int, pos: np.ndarray, rects: np.ndarray, nrect: int) -> ExplorationState:
    points = tuple(Point(float(x), float(y)) for x, y in pos)
    floor = float(pos[:, 1].min())
    history = HistoryRegion.from_array(rects[:nrect], floor)
    mi = int(_mover_index(pos))
    stay = 0 if n == 0 else int(_distinct_count(pos)) - 1
    L = region_height(history)
    return ExplorationState(n, points, history, mi, stay, L, L + 2.0 * stay)


def init(points) -> ExplorationState:
    """State at step 0: empty history, G = 0."""
    pts = [p if isinstance(p, Point) else Point(*p) for p in points]
    if not pts:
        raise ValueError("at least one start point is required")
    if len({p.x2 for p in pts}) != 1:
        raise ValueError("start points must share one ordinate")
    if len({p.x1 for p in pts}) != len(pts):
        raise ValueError("start points must have distinct abscissas")
    pos = np.array([p.as_tuple() for p in pts], dtype=float)
    return _state(0, pos, np.zeros((0, 4)), 0)


def _step(state: ExplorationState, ppp, original: bool):
    pos = state.pos_array()
    rects = np.ascontiguousarray(state.history.as_array())
    rec = np.empty(NCOL)
    mode, seed, stream, lam, fixed = ppp.source()
    rects, nrect = _advance(mode, seed, stream, lam, fixed, original, state.n, pos,
                            rects, rects.shape[0], rec)
    return _state(state.n + 1, pos, rects, nrect), StepRecord.from_row(rec)


def step_auxiliary(state: ExplorationState, fresh: FreshPpp | FixedPpp):
    """Advance the mover using ``fresh`` (realization number ``state.n + 1``)."""
    if isinstance(fresh, TiledPpp):
        raise TypeError("the auxiliary step consumes a fresh realization")
    return _step(state, fresh, original=False)


def step_original(state: ExplorationState, global_ppp: TiledPpp | FixedPpp):
    if isinstance(global_ppp, FreshPpp):
        raise TypeError("the original process runs on the global realization")
    return _step(state, global_ppp, original=True)


def classify_top(state: ExplorationState, record: StepRecord) -> bool:
    dy = record.ancestor.x2 - record.mover_before.x2
    return bool(_classify_top(state.k, record.is_up, record.connected_to_stay,
                              record.step_length, dy, state.L))


def compute_R(state: ExplorationState, fresh) -> int:
    """Integer strip width above ``mover + (0, L)``."""
    m = state.mover
    rp = _strip_min_dx(*fresh.source(), m.x1, m.x2 + state.L)
    return int(_r_from_width(rp))


def detect_E_event(state: ExplorationState, fresh) -> bool:
    if not state.L > 0:
        raise ValueError("side boxes are undefined for an empty history")
    m = state.mover
    rects = np.ascontiguousarray(state.history.as_array())
    d1, d2 = _e_distances(*fresh.source(), m.x1, m.x2, state.L, rects, rects.shape[0])
    return bool(d1 < d2)


def inject_history(state: ExplorationState, rects, floor: float) -> ExplorationState:
    """Replace the history of ``state`` by ``rects`` (scenario injection).

    The mover must sit on the floor line, every rectangle must lie above the
    floor, and no rectangle may contain a tip or straddle the mover's abscissa
    while touching the floor (the mover would then lie inside an explored ball).
    """
    rects = tuple(r if isinstance(r, Rect) else Rect(*r) for r in rects)
    m = state.mover
    if m.x2 != floor:
        raise ValueError("the mover must lie on the floor line")
    for r in rects:
        if r.is_empty:
            raise ValueError("empty rectangle in injected history")
        if r.lo2 < floor:
            raise ValueError(f"rectangle {r} reaches below the floor")
        if r.lo2 == floor and r.lo1 < m.x1 < r.hi1:
            raise ValueError(f"rectangle {r} straddles the mover")
        if any(r.contains(p) for p in state.positions):
            raise ValueError(f"rectangle {r} contains a path tip")
    history = HistoryRegion(rects, floor)
    L = region_height(history)
    return ExplorationState(state.n, state.positions, history, state.mover_index,
                            state.stay_count, L, L + 2.0 * state.stay_count)


def run_exploration(state: ExplorationState, config: PppConfig | None, n_steps: int,
                    original: bool = False, fixed: FixedPpp | None = None):
    """Run ``n_steps`` steps in one kernel call.

    Returns ``(final_state, records)`` with records as an ``(n_steps, NCOL)``
    array; use :func:`records_from_array` for :class:`StepRecord` objects.
    """
    pos = state.pos_array()
    rects = np.ascontiguousarray(state.history.as_array())
    if fixed is not None:
        mode, seed, _, lam, fx = fixed.source()
    else:
        mode, seed, _, lam, fx = TiledPpp(config).source()
    out, rects, nrect = _run(mode, seed, lam, fx, original, pos, rects, rects.shape[0],
                             state.n, int(n_steps))
    return _state(state.n + n_steps, pos, rects, nrect), out


def records_from_array(arr: np.ndarray) -> list[StepRecord]:
    return [StepRecord.from_row(row) for row in arr]


def write_records_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for r in records:
            w.writerow(r.csv_row())


# --------------------------------------------------------------------------
# conditional sampling from a fixed state


@nb.njit(cache=True)
def _replicate(seed, lam, pos0, rects0, n0, n_steps, reps):
    fixed = np.zeros((0, 2))
    out = np.empty((reps, n_steps, NCOL))
    for r in range(reps):
        pos = pos0.copy()
        rects = rects0.copy()
        nrect = rects0.shape[0]
        for j in range(n_steps):
            rects, nrect = _advance(0, seed, r * n_steps + j + 1, lam, fixed, False, n0 + j,
                                    pos, rects, nrect, out[r, j])
    return out


def sample_from_state(state: ExplorationState, config: PppConfig, reps: int,
                      n_steps: int = 1) -> np.ndarray:
    """``reps`` independent continuations of ``state`` by ``n_steps`` auxiliary steps.

    Every continuation draws its own fresh realizations, so the rows are i.i.d.
    samples of the conditional step law given the state.  Returns an array of
    shape ``(reps, n_steps, NCOL)``.
    """
    rects = np.ascontiguousarray(state.history.as_array())
    return _replicate(np.uint64(config.seed), float(config.lam), state.pos_array(), rects,
                      state.n, int(n_steps), int(reps))


@nb.njit(cache=True)
def _small_ball_up(seed, lam, r, eps, reps):
    """Up-step indicator from the origin given B+(0, r) void and
    B+((0, r), eps) occupied (exact conditioning: a zero-truncated Poisson
    number of uniform points in the small ball)."""
    fixed = np.zeros((0, 2))
    rects = np.empty((2, 4))
    rects[0, 0] = -r
    rects[0, 1] = r
    rects[0, 2] = 0.0
    rects[0, 3] = r
    rects[1, 0] = -eps
    rects[1, 1] = eps
    rects[1, 2] = r
    rects[1, 3] = r + eps
    mean = lam * 2.0 * eps * eps
    out = np.empty(reps, np.bool_)
    extra = np.empty((64, 2))
    for i in range(reps):
        np.random.seed(np.int64(i))
        m = 0
        while m == 0:
            m = np.random.poisson(mean)
        m = min(m, 64)
        for t in range(m):
            extra[t, 0] = np.random.uniform(-eps, eps)
            extra[t, 1] = np.random.uniform(r, r + eps)
        ax, ay, d, _ = _nearest(0, seed, i + 1, lam, fixed, 0.0, 0.0, rects, 2, extra, m)
        out[i] = ay == max(abs(ax), ay)
    return out


def small_ball_up_frequency(config: PppConfig, r: float, reps: int,
                            eps: float = 0.125) -> float:
    """Up-step frequency from the origin given a void half ball of radius ``r``
    and at least one point in the small half ball of radius ``eps`` on top of it."""
    if not r >= 1:
        raise ValueError("r must be at least 1")
    return float(_small_ball_up(np.uint64(config.seed), float(config.lam), float(r),
                                float(eps), int(reps)).mean())
