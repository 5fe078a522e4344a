"""Dominating chains driven by exploration step records.

The single-path chain M moves down by one on a top step, up by one on an
E event and otherwise jumps to max(M, R).  The joint chain M2 consumes blocks
of k records: down by one when all are top, up by k when any carries E, else
max(M2, max R).  Coupled runs feed the very records produced by the
exploration into the chain and compare L (resp. G at block ends) with it.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numba as nb
import numpy as np

from .exploration import (
    C_E, C_GA, C_LA, C_R, C_TOP, NCOL, ExplorationState, StepRecord, _advance,
)
from .geometry import Point, Rect
from .ppp import _strip_min_dx, child_seed

__all__ = [
    "DominatorState",
    "advance_single",
    "advance_joint",
    "DominationReport",
    "coupled_single",
    "coupled_joint",
    "verify_domination",
    "replay_single",
    "replay_joint",
    "hitting_time_tail",
    "DriftReport",
    "drift_bound",
    "drift_check",
    "drift_scenarios",
    "expected_exp_R",
    "exp_R_running_mean",
    "exp_R_moment_stable",
]

SINGLE = "single"
JOINT = "joint"


@dataclass(frozen=True)
class DominatorState:
    regime: str
    value: float
    kappa: float | None = None

    def __post_init__(self):
        if self.regime not in (SINGLE, JOINT):
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.regime == JOINT and self.kappa is None:
            raise ValueError("the joint regime needs kappa")

    @classmethod
    def initial(cls, regime: str, kappa: float | None = None) -> "DominatorState":
        if regime == JOINT:
            return cls(JOINT, float(kappa) + 1.0, float(kappa))
        return cls(SINGLE, 0.0)


@nb.njit(cache=True)
def _next_single(M, top, E, R):
    if top:
        return max(M - 1.0, 0.0)
    if E:
        return M + 1.0
    return max(M, R)


@nb.njit(cache=True)
def _next_joint(M, all_top, any_E, max_R, k):
    if all_top:
        return M - 1.0
    if any_E:
        return M + k
    return max(M, max_R)


def advance_single(M: DominatorState, rec: StepRecord) -> DominatorState:
    if M.regime != SINGLE:
        raise ValueError("advance_single needs the single regime")
    v = float(_next_single(M.value, rec.is_top, rec.E_event, float(rec.R)))
    return DominatorState(SINGLE, v)


def advance_joint(M: DominatorState, recs, k: int | None = None) -> DominatorState:
    if M.regime != JOINT:
        raise ValueError("advance_joint needs the joint regime")
    recs = list(recs)
    if k is not None and len(recs) != k:
        raise ValueError(f"expected a block of {k} records, got {len(recs)}")
    if not recs:
        raise ValueError("empty block")
    v = float(_next_joint(M.value, all(r.is_top for r in recs), any(r.E_event for r in recs),
                          float(max(r.R for r in recs)), float(len(recs))))
    return DominatorState(JOINT, v, M.kappa)


def replay_single(records, m0: float = 0.0) -> np.ndarray:
    """Trajectory M_0..M_n of the single chain along a record stream."""
    out = [m0]
    for r in records:
        out.append(float(_next_single(out[-1], r.is_top, r.E_event, float(r.R))))
    return np.array(out)


def replay_joint(records, k: int, kappa: float) -> np.ndarray:
    records = list(records)
    if len(records) % k:
        raise ValueError("record stream length must be a multiple of k")
    out = [kappa + 1.0]
    for b in range(0, len(records), k):
        blk = records[b:b + k]
        out.append(float(_next_joint(out[-1], all(r.is_top for r in blk),
                                     any(r.E_event for r in blk),
                                     float(max(r.R for r in blk)), float(k))))
    return np.array(out)


# --------------------------------------------------------------------------
# coupled kernels

# per-run summary columns
S_VIOL, S_FIRST, S_LHS, S_RHS, S_TAU, S_TOPE, S_KTOP_BAD, S_NONINT = range(8)
NSUM = 8


@nb.njit(cache=True)
def _coupled_single(seed, lam, n_steps, fault, out):
    pos = np.zeros((1, 2))
    rects = np.empty((16, 4))
    nrect = 0
    fixed = np.zeros((0, 2))
    rec = np.empty(NCOL)
    M = 0.0
    viol = 0
    first = -1
    tau = -1
    top_e = 0
    nonint = 0
    flipped = False
    out[S_LHS] = np.nan
    out[S_RHS] = np.nan
    for n in range(n_steps):
        rects, nrect = _advance(0, seed, n + 1, lam, fixed, False, n, pos, rects, nrect, rec)
        top = rec[C_TOP] != 0.0
        E = rec[C_E] != 0.0
        if top and E:
            top_e += 1
        if fault and not flipped and not top and rec[C_LA] > max(M - 1.0, 0.0):
            top = True
            flipped = True
        M = _next_single(M, top, E, rec[C_R])
        if M != math.floor(M):
            nonint += 1
        if rec[C_LA] > M:
            viol += 1
            if first < 0:
                first = n + 1
                out[S_LHS] = rec[C_LA]
                out[S_RHS] = M
        if tau < 0 and M == 0.0:
            tau = n + 1
    out[S_VIOL] = viol
    out[S_FIRST] = first
    out[S_TAU] = tau
    out[S_TOPE] = top_e
    out[S_KTOP_BAD] = 0
    out[S_NONINT] = nonint


@nb.njit(cache=True)
def _coupled_joint(seed, lam, pos, kappa, n_blocks, fault, out):
    k = pos.shape[0]
    rects = np.empty((16, 4))
    nrect = 0
    fixed = np.zeros((0, 2))
    rec = np.empty(NCOL)
    M = kappa + 1.0
    G_prev = 0.0
    viol = 0
    first = -1
    tau = -1
    ktop_bad = 0
    flipped = False
    out[S_LHS] = np.nan
    out[S_RHS] = np.nan
    n = 0
    for b in range(n_blocks):
        all_top = True
        any_E = False
        max_R = 0.0
        raw_all_top = True
        for j in range(k):
            rects, nrect = _advance(0, seed, n + 1, lam, fixed, False, n, pos, rects,
                                    nrect, rec)
            n += 1
            top = rec[C_TOP] != 0.0
            raw_all_top = raw_all_top and top
            all_top = all_top and top
            any_E = any_E or rec[C_E] != 0.0
            max_R = max(max_R, rec[C_R])
        G = rec[C_GA]
        # forge all-top flags until the forged chain falls below G
        if fault and not flipped and not all_top and not any_E:
            all_top = True
        if raw_all_top and G > G_prev - 0.5:
            ktop_bad += 1
        M = _next_joint(M, all_top, any_E, max_R, float(k))
        if G > M:
            viol += 1
            flipped = True
            if first < 0:
                first = b + 1
                out[S_LHS] = G
                out[S_RHS] = M
        if tau < 0 and M <= kappa:
            tau = b + 1
        G_prev = G
    out[S_VIOL] = viol
    out[S_FIRST] = first
    out[S_TAU] = tau
    out[S_TOPE] = 0
    out[S_KTOP_BAD] = ktop_bad
    out[S_NONINT] = 0


@nb.njit(cache=True)
def _batch_single(seeds, lam, n_steps, fault):
    out = np.empty((seeds.shape[0], NSUM))
    for i in range(seeds.shape[0]):
        _coupled_single(seeds[i], lam, n_steps, fault and i == 0, out[i])
    return out


@nb.njit(cache=True)
def _batch_joint(seeds, lam, starts, kappa, n_blocks, fault):
    out = np.empty((seeds.shape[0], NSUM))
    for i in range(seeds.shape[0]):
        _coupled_joint(seeds[i], lam, starts.copy(), kappa, n_blocks, fault and i == 0, out[i])
    return out


def _seeds(master: int, first: int, count: int) -> np.ndarray:
    return np.array([child_seed(master, first + i) for i in range(count)], dtype=np.uint64)


def coupled_single(lam: float, seed: int, runs: int, n_steps: int, first_run: int = 0,
                   fault: bool = False) -> np.ndarray:
    """Per-run summaries (rows of NSUM columns) of coupled single-path runs.

    With ``fault`` set, the first run of the batch consumes one forged top flag:
    the first non-top step whose flip breaks domination.
    """
    return _batch_single(_seeds(seed, first_run, runs), float(lam), int(n_steps), bool(fault))


def coupled_joint(lam: float, seed: int, runs: int, n_blocks: int, kappa: float = 4.0,
                  starts=((0.0, 0.0), (1.0, 0.0)), first_run: int = 0,
                  fault: bool = False) -> np.ndarray:
    pts = np.array(sorted(starts), dtype=float)
    if len(set(pts[:, 1])) != 1:
        raise ValueError("start points must share one ordinate")
    return _batch_joint(_seeds(seed, first_run, runs), float(lam), pts, float(kappa),
                        int(n_blocks), bool(fault))


@dataclass
class DominationReport:
    regime: str
    runs: int
    steps_per_run: int
    checks: int
    violations: int
    violating_runs: int
    first_violation: dict | None
    top_and_E_steps: int = 0
    k_top_decrease_failures: int = 0
    non_integer_values: int = 0

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return asdict(self) | {"ok": self.ok}


def verify_domination(summary: np.ndarray, regime: str, steps_per_run: int) -> DominationReport:
    """Aggregate per-run summaries of a coupled batch into one report."""
    summary = np.atleast_2d(summary)
    bad = np.flatnonzero(summary[:, S_VIOL] > 0)
    first = None
    if bad.size:
        i = int(bad[0])
        first = {"run": i, "step": int(summary[i, S_FIRST]),
                 "dominated": float(summary[i, S_LHS]), "dominator": float(summary[i, S_RHS])}
    return DominationReport(
        regime=regime,
        runs=int(summary.shape[0]),
        steps_per_run=int(steps_per_run),
        checks=int(summary.shape[0] * steps_per_run),
        violations=int(summary[:, S_VIOL].sum()),
        violating_runs=int(bad.size),
        first_violation=first,
        top_and_E_steps=int(summary[:, S_TOPE].sum()),
        k_top_decrease_failures=int(summary[:, S_KTOP_BAD].sum()),
        non_integer_values=int(summary[:, S_NONINT].sum()),
    )


def hitting_time_tail(regime: str, n_grid, replications: int, lam: float = 1.0,
                      seed: int = 0, kappa: float = 4.0, horizon: int | None = None):
    """Empirical survival of the dominator hitting time.

    Single regime: first n >= 1 with M_n = 0.  Joint regime (k = 2): first
    block n >= 1 with M2_n <= kappa.  Runs that do not hit within ``horizon``
    are censored there.
    """
    from .stats import survival_curve

    n_grid = sorted(n_grid)
    horizon = int(horizon or 4 * max(n_grid) + 1)
    if regime == SINGLE:
        summ = coupled_single(lam, seed, replications, horizon)
    elif regime == JOINT:
        summ = coupled_joint(lam, seed, replications, horizon, kappa)
    else:
        raise ValueError(f"unknown regime {regime!r}")
    tau = summ[:, S_TAU]
    samples = [(float(t), False) if t >= 0 else (float(horizon), True) for t in tau]
    return survival_curve(samples, n_grid)


# --------------------------------------------------------------------------
# drift


def expected_exp_R(lam: float, alpha: float, above: float = -math.inf) -> float:
    """E[exp(alpha R) 1(R > above)] for R = floor(R') + 1, P(R' > x) = exp(-2 lam x)."""
    q = math.exp(-2.0 * lam)
    if alpha >= 2.0 * lam:
        return math.inf
    j0 = 1 if above < 1 else math.floor(above) + 1
    # P(R = j) = q^(j-1) (1 - q); geometric series from j0
    a = math.exp(alpha)
    return (1.0 - q) * a**j0 * q ** (j0 - 1) / (1.0 - a * q)


def drift_bound(l: float, lam: float, alpha: float, k: int = 1) -> float:
    """Three-term upper bound on E[exp(alpha (M_1 - M_0)) | M_0 = l]."""
    return (math.exp(-alpha) + 2.0 * math.exp(k * alpha) / l
            + math.exp(-alpha * l) * expected_exp_R(lam, alpha, above=l))


def drift_scenarios(l: float, k: int = 1) -> dict[str, ExplorationState]:
    """Conditioning states of history height ``l`` (plus the empty one).

    * empty: no history;
    * one_sided: a single explored ball to the right of the mover;
    * two_sided: explored balls on both sides, the mover in the gap.
    """
    from .exploration import init, inject_history

    if k == 1:
        base = init([Point(0.0, 0.0)])
    else:
        base = init([Point(float(i), 0.0) for i in range(k)])
        # make the other tips sit above the floor, as after a real step
        pos = (Point(0.0, 0.0),) + tuple(Point(float(2 * l + 1 + i), 0.5) for i in range(k - 1))
        base = ExplorationState(1, pos, base.history, 0, k - 1, 0.0, 2.0 * (k - 1))
    rects_one = (Rect(0.0, 2.0 * l, 0.0, l),)
    rects_two = (Rect(-2.0 * l, -0.5, 0.0, l), Rect(0.5, 0.5 + l, 0.0, 0.6 * l))
    out = {"empty": base}
    for name, rs in (("one_sided", rects_one), ("two_sided", rects_two)):
        st = inject_history(base, rs, 0.0)
        out[name] = st
    return out


@nb.njit(cache=True)
def _drift_sample(seed, lam, pos0, rects0, l, alpha, k, reps, joint):
    acc = np.empty(reps)
    fixed = np.zeros((0, 2))
    rec = np.empty(NCOL)
    for r in range(reps):
        pos = pos0.copy()
        rects = rects0.copy()
        nrect = rects0.shape[0]
        all_top = True
        any_E = False
        max_R = 0.0
        for j in range(k):
            rects, nrect = _advance(0, seed, r * k + j + 1, lam, fixed, False, j, pos, rects,
                                    nrect, rec)
            all_top = all_top and rec[C_TOP] != 0.0
            any_E = any_E or rec[C_E] != 0.0
            max_R = max(max_R, rec[C_R])
        if joint:
            M1 = _next_joint(l, all_top, any_E, max_R, float(k))
        else:
            M1 = _next_single(l, all_top, any_E, max_R)
        acc[r] = math.exp(alpha * (M1 - l))
    return acc


@dataclass
class DriftReport:
    alpha: float
    lam: float
    k: int
    replications: int
    table: list[dict] = field(default_factory=list)
    r: float = math.nan
    n0: int = -1
    unstable_R_moment: bool = False

    def rows_for(self, l: float) -> list[dict]:
        return [row for row in self.table if row["l"] == l]

    def worst(self, l: float) -> float:
        return max(row["moment"] for row in self.rows_for(l))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        cols = ["l", "scenario", "moment", "stderr", "bound", "below_bound"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in self.table:
                w.writerow([row[c] for c in cols])


def drift_check(regime: str, alpha: float, l_grid, replications: int, lam: float = 1.0,
                seed: int = 0, k: int | None = None) -> DriftReport:
    """One-step exponential moments of the dominator from M_0 = l.

    For each l and conditioning scenario the exploration takes one step (one
    block of k steps in the joint regime) from the injected state, the chain
    moves from l, and the mean of exp(alpha (M_1 - l)) is tabulated against
    the three-term bound.  ``r`` is the largest contraction factor valid over
    the tail of the grid from ``n0`` on, if any.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    joint = regime == JOINT
    k = int(k or (2 if joint else 1))
    rep = DriftReport(alpha=float(alpha), lam=float(lam), k=k, replications=int(replications))
    rep.unstable_R_moment = not exp_R_moment_stable(lam, alpha, seed=seed)
    worst_by_l = []
    for l in l_grid:
        bound = drift_bound(l, lam, alpha, k if joint else 1)
        worst = 0.0
        for name, st in drift_scenarios(l, k).items():
            pos = st.pos_array()
            rects = np.ascontiguousarray(st.history.as_array())
            acc = _drift_sample(np.uint64(child_seed(seed, int(l * 1000))), float(lam), pos,
                                rects, float(l), float(alpha), k, int(replications), joint)
            m = float(acc.mean())
            se = float(acc.std(ddof=1) / math.sqrt(acc.size))
            worst = max(worst, m)
            rep.table.append({"l": float(l), "scenario": name, "moment": m, "stderr": se,
                              "bound": bound, "below_bound": bool(m < bound)})
        worst_by_l.append((float(l), worst))
    # smallest n0 such that every l > n0 on the grid contracts
    for i, (l, _) in enumerate(worst_by_l):
        tail = [w for _, w in worst_by_l[i:]]
        if max(tail) < 1.0:
            rep.n0 = int(math.floor(l)) - 1 if i else 0
            rep.r = 1.0 / max(tail)
            break
    return rep


def exp_R_running_mean(lam: float, alpha: float, n: int, seed: int = 0) -> np.ndarray:
    """Running mean of exp(alpha R) over n independent strip widths."""
    vals = _sample_R(np.uint64(seed), float(lam), int(n))
    return np.cumsum(np.exp(alpha * vals)) / np.arange(1, n + 1)


def exp_R_moment_stable(lam: float, alpha: float, n: int = 100_000, seed: int = 0,
                        tol: float = 0.01) -> bool:
    """Whether the running mean of exp(alpha R) moves by less than ``tol``
    (relative) over the second half of ``n`` samples."""
    m = exp_R_running_mean(lam, alpha, n, seed)
    return bool(np.isfinite(m[-1]) and abs(m[-1] / m[n // 2 - 1] - 1.0) < tol)


@nb.njit(cache=True)
def _sample_R(seed, lam, n):
    fixed = np.zeros((0, 2))
    out = np.empty(n)
    for i in range(n):
        out[i] = math.floor(_strip_min_dx(0, seed, i + 1, lam, fixed, 0.0, 0.0)) + 1.0
    return out
