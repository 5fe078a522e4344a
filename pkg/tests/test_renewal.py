import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsfsim.exploration import C_FLOOR, C_GA, C_N, init, run_exploration
from dsfsim.geometry import HistoryRegion, Point, Rect
from dsfsim.exploration import ExplorationState
from dsfsim.ppp import FixedPpp, PppConfig, child_seed
from dsfsim.renewal import (
    GoodStep, RenewalConfig, RenewalRecord, beta1_steps, check_ren_event, detect_beta1,
    detect_good_steps, ren_probability, run_renewal_chain, write_renewals_csv,
    z_increment_moments,
)
from dsfsim.stats import survival_curve

CFG = RenewalConfig(2, 4.0)


def _pair(x1, x2, y=0.0, n=2):
    pos = (Point(x1, y), Point(x2, y))
    return ExplorationState(n, pos, HistoryRegion((), y), 0, 1, 0.0, 2.0)


def _stream(rows):
    """Fake states from (n, G, mover ordinate) triples."""
    return [SimpleNamespace(n=n, L=G, G=G, positions=(Point(0, y), Point(1, y)))
            for n, G, y in rows]


# -- config ---------------------------------------------------------------------


def test_config_default_kappa():
    assert RenewalConfig().kappa == 4.0


@pytest.mark.parametrize("k,kappa", [(2, 3.0), (3, 5.0), (0, 10.0)])
def test_config_rejects(k, kappa):
    with pytest.raises(ValueError):
        RenewalConfig(k, kappa)


# -- beta1 ----------------------------------------------------------------------


def test_beta1_hand_built_fixture():
    fx = FixedPpp([(2, 0.7), (-1, 2.5), (1, 4), (1.6, 4.8), (1.2, 9)])
    _, arr = run_exploration(init([Point(1, 0)]), PppConfig(1.0, 0), 5, fixed=fx)
    assert detect_beta1(arr)[0] == 4


def test_beta1_consecutive_gap_one():
    fx = FixedPpp([(0.2, 1.5), (0.1, 3.0)])
    _, arr = run_exploration(init([Point(0, 0)]), PppConfig(1.0, 0), 2, fixed=fx)
    assert detect_beta1(arr) == [1, 2]


def test_beta1_stream_forms_agree():
    cfg = PppConfig(1.0, 12)
    _, arr = run_exploration(init([Point(0, 0)]), cfg, 2000)
    assert detect_beta1(arr) == list(beta1_steps(cfg, 2000))


def test_beta1_gap_tail_superlinear():
    gaps = []
    i = 0
    while sum(g.size for g in gaps) < 100_000:
        b = beta1_steps(PppConfig(1.0, child_seed(5, i)), 50_000)
        gaps.append(np.diff(np.concatenate(([0], b))))
        i += 1
    est = survival_curve(np.concatenate(gaps), [5, 10, 20])
    p = dict(zip(est.grid, est.survival))
    for n in (5, 10):
        assert p[2 * n] / p[n] <= p[n] * 1.5


# -- good steps -------------------------------------------------------------------


def test_good_step_first_qualifying_even_index():
    rows = [(0, 0, 0.0), (1, 7, 0.5), (2, 6, 3.0), (3, 2, 4.0), (4, 5, 6.0), (5, 1, 6.5),
            (6, 3, 7.0), (7, 1, 8.0), (8, 2, 12.5)]
    good = detect_good_steps(_stream(rows), CFG)
    assert [g.n for g in good] == [6, 8]
    assert good[0] == GoodStep(1, 6, 7.0, 3.0)


def test_no_good_step_while_G_large():
    rows = [(n, 4.5 + n % 3, 10.0 * n) for n in range(20)]
    assert detect_good_steps(_stream(rows), CFG) == []


def test_good_steps_require_k2():
    with pytest.raises(ValueError):
        detect_good_steps([], RenewalConfig(1))


def test_good_steps_recheck_against_raw_records():
    cfg = PppConfig(1.0, 3)
    _, arr = run_exploration(init([Point(0, 0), Point(50, 0)]), cfg, 5000)
    good = detect_good_steps(arr, CFG, start_ordinate=0.0)
    assert good
    last = 0.0
    rows = {int(r[C_N]): r for r in arr}
    for g in good:
        r = rows[g.n]
        assert g.n % 2 == 0 and r[C_GA] <= 4.0 and r[C_FLOOR] - last > 5.0
        last = r[C_FLOOR]
    chain = run_renewal_chain([(0, 0), (50, 0)], CFG, 5000, cfg)
    assert [g.n for g in chain.good_steps] == [g.n for g in good]


def test_good_step_gap_tail():
    gaps = []
    i = 0
    while sum(g.size for g in gaps) < 10_000:
        ch = run_renewal_chain([(0, 0), (100, 0)], CFG, 100_000,
                               PppConfig(1.0, child_seed(21, i)))
        gaps.append(ch.good_gaps())
        i += 1
    est = survival_curve(np.concatenate(gaps), [15, 30])
    p15, p30 = est.survival
    assert p30 / p15 <= p15 + 0.05


# -- the renewal event ----------------------------------------------------------------


def test_ren_single_cap_point_per_path():
    s = _pair(0.0, 100.0)
    fx = FixedPpp([(0.0, 4.5), (100.0, 4.5)])
    assert check_ren_event(GoodStep(1, 2, 0.0, 2.0), s, fx, CFG)


def test_ren_second_point_breaks_event():
    s = _pair(0.0, 100.0)
    fx = FixedPpp([(0.0, 4.5), (100.0, 4.5), (97.0, 1.0)])
    assert not check_ren_event(None, s, fx, CFG)


def test_ren_overlapping_balls_count_per_ball():
    s = _pair(0.0, 3.0)
    fx = FixedPpp([(0.0, 4.5), (3.0, 4.5)])
    # each ball also holds the other path's cap point
    assert not check_ren_event(None, s, fx, CFG)


def test_ren_rejects_mismatched_good_step():
    with pytest.raises(ValueError):
        check_ren_event(GoodStep(1, 4, 0.0, 0.0), _pair(0, 100), FixedPpp([]), CFG)


def test_ren_probability_formula():
    assert ren_probability(1.0, 4.0, 2) == pytest.approx(math.exp(-100.0))


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(1.0, 10.0))
def test_cap_inside_big_ball(x, y, kappa):
    res = 0.02
    g = np.arange(-1 + res / 2, 1, res)
    dx, dy = np.meshgrid(g, g)
    cap = (np.abs(dx) < 1) & (dy > 0) & (dy < 1) & (dy >= np.abs(dx))
    px = x + dx[cap]
    py = y + kappa + dy[cap]
    R = kappa + 1
    assert np.all((np.abs(px - x) < R) & (py > y) & (py < y + R))


def test_ren_frequency_at_good_steps():
    """Observed Ren frequency at good steps against half the disjoint-ball value."""
    hits = total = 0
    i = 0
    while total < 10_000:
        ch = run_renewal_chain([(0, 0), (100, 0)], CFG, 100_000,
                               PppConfig(1.0, child_seed(33, i)))
        total += len(ch.good_steps)
        hits += sum(not r.merged for r in ch.records)
        i += 1
    assert hits / total >= 0.5 * ren_probability(1.0, 4.0, 2)


# -- chains ---------------------------------------------------------------------------


def _fixed_renewal():
    fx = FixedPpp([(0, 5.5), (100, 5.5), (0, 10), (100, 10)])
    return run_renewal_chain([(100, 0), (0, 0)], CFG, 3, fixed=fx)


def test_chain_first_renewal_gap():
    ch = _fixed_renewal()
    r = ch.records[0]
    assert r.Z == pytest.approx(100.0) and r.beta == 2 and r.gamma == 1
    assert r.restart_points == (Point(0, 9.5), Point(100, 9.5))
    assert r.down_points == (Point(0, 5.5), Point(100, 5.5))
    assert ch.budget_exhausted and not ch.merged


def test_chain_rejects_bad_starts():
    with pytest.raises(ValueError):
        run_renewal_chain([(0, 0), (1, 1)], CFG, 10, PppConfig(1.0, 0))
    with pytest.raises(ValueError):
        run_renewal_chain([(0, 0)], CFG, 10, PppConfig(1.0, 0))


def test_chain_merge_records_zero():
    for i in range(20):
        ch = run_renewal_chain([(0, 0), (1, 0)], CFG, 100_000, PppConfig(1.0, child_seed(2, i)))
        if ch.merged:
            assert ch.records[-1].merged and ch.records[-1].Z == 0.0
            return
    pytest.fail("no merge in 20 chains")


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**40), st.floats(1.0, 30.0))
def test_chain_structure(seed, gap):
    ch = run_renewal_chain([(0, 0), (gap, 0)], CFG, 3000, PppConfig(1.0, seed))
    betas = [r.beta for r in ch.records]
    assert all(a < b for a, b in zip(betas, betas[1:]))
    assert all(b % 2 == 0 for b, r in zip(betas, ch.records) if not r.merged)
    goods = {g.n for g in ch.good_steps}
    assert all(r.beta in goods for r in ch.records if not r.merged)
    assert all(r.Z >= 0 for r in ch.records)
    assert ch.merged or ch.budget_exhausted


def _joint_records(n_target, seed):
    recs = []
    i = 0
    while len(recs) < n_target and i < 200:
        ch = run_renewal_chain([(0, 0), (100, 0)], CFG, 100_000,
                               PppConfig(1.0, child_seed(seed, i)))
        recs.extend(r for r in ch.records if not r.merged)
        i += 1
    return recs


def test_beta_gap_tail_geometric():
    recs = _joint_records(10_000, 41)
    gaps = np.diff([r.beta for r in recs])
    assert gaps.size >= 1000, f"only {gaps.size} joint renewal gaps"
    est = survival_curve(gaps, [20, 40, 80])
    r1, r2 = est.survival[1] / est.survival[0], est.survival[2] / est.survival[1]
    assert r2 <= r1 + 0.05


def test_z_hits_zero_from_small_gaps():
    hits = trials = 0
    for i in range(10_000):
        ch = run_renewal_chain([(0, 0), (5, 0)], CFG, 20_000, PppConfig(1.0, child_seed(7, i)))
        zs = [r for r in ch.records]
        for a, b in zip(zs, zs[1:]):
            if a.Z <= 5:
                trials += 1
                hits += b.Z == 0.0
    assert trials > 0 and hits > 0, f"{hits} hits in {trials} trials"


def test_z_moments_far_from_zero():
    recs = _joint_records(10_001, 43)
    m = z_increment_moments(recs, [50.0], min_records=1000)[0]
    assert not m.insufficient, f"{m.count} increments above 50"
    assert abs(m.mean) <= 0.2 and m.second > 0.01 and m.third_abs_half_ratio < 0.2


# -- Z moment summaries on synthetic data ------------------------------------------------


def test_z_moments_random_walk_oracle(rng):
    z = 1000 + np.cumsum(rng.choice([-1.0, 1.0], 20_001))
    m = z_increment_moments(z, [50.0])[0]
    assert not m.insufficient and m.count == 20_000
    assert abs(m.mean) < 0.03 and m.second == 1.0 and m.third_abs == 1.0
    assert m.third_abs_half_ratio == 0.0


def test_z_moments_flag_short_input():
    m = z_increment_moments([100.0, 101.0, 99.0], [50.0])[0]
    assert m.insufficient and m.count == 2
    empty = z_increment_moments([1.0, 2.0], [50.0])[0]
    assert empty.insufficient and empty.count == 0


def test_renewals_csv(tmp_path):
    ch = _fixed_renewal()
    p = tmp_path / "r.csv"
    write_renewals_csv(p, ch.records)
    lines = p.read_text().splitlines()
    assert lines[0] == "ell,gamma,beta,z,mover_ordinate"
    assert lines[1].split(",")[:3] == ["0", "1", "2"]
