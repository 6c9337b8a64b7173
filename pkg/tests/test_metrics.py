import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from v2xsim.channel import FailureCause, RxOutcome
from v2xsim.grid import CsrId, GridConfig
from v2xsim.metrics import (CollisionEvent, ConflictDistanceAccumulator, collision_distance_timeseries,
                            conflict_probability_vs_distance, conflicts_in_subframe, dcc_timeseries,
                            default_distance_bins, failure_taxonomy, mac_delay_and_itt_phy,
                            occupancy_by_window, rb_occupancy_distribution, settling_time)

GRID = GridConfig()


# -- conflict events --------------------------------------------------------------------

def test_distinct_csrs_no_conflict():
    txs = [(0, CsrId(5, 0)), (1, CsrId(5, 1))]
    assert conflicts_in_subframe(5, txs, lambda a, b: 1.0) == []


def test_three_on_one_csr():
    txs = [(u, CsrId(5, 0)) for u in (4, 2, 9)]
    ev = conflicts_in_subframe(5, txs, lambda a, b: abs(a - b))
    assert len(ev) == math.comb(3, 2)
    assert {(e.ue_a, e.ue_b) for e in ev} == {(2, 4), (2, 9), (4, 9)}


def test_pair_at_fifty_metres():
    ev = conflicts_in_subframe(5, [(0, CsrId(5, 1)), (1, CsrId(5, 1))], lambda a, b: 50.0)
    assert len(ev) == 1 and ev[0].distance_m == 50.0


def test_event_invariants():
    with pytest.raises(ValueError):
        CollisionEvent(0, CsrId(0, 0), 1, 1, 5.0)
    with pytest.raises(ValueError):
        CollisionEvent(0, CsrId(0, 0), 1, 2, -5.0)


# -- conflict probability -----------------------------------------------------------------

def test_no_conflicts_all_zero():
    acc = ConflictDistanceAccumulator(default_distance_bins())
    acc.add(pair_d=[10, 600, 1500], tx_d=[10, 600, 1500])
    p = acc.per_pair()
    assert np.nansum(p) == 0
    assert np.isnan(p[5])  # 250-300 m: nothing exposed


def test_ratio_definition():
    assert conflict_probability_vs_distance([1], [10]).tolist() == [0.1]
    assert np.isnan(conflict_probability_vs_distance([0], [0])[0])


def test_accumulator_binning_and_overflow():
    acc = ConflictDistanceAccumulator(default_distance_bins(50, 2000))
    acc.add(conflict_d=[0, 49.9, 50, 5000], pair_d=[0, 49.9, 50, 5000])
    assert acc.conflicts[0] == 2 and acc.conflicts[1] == 1 and acc.conflicts[-1] == 1
    assert acc.probability_in(0, 100) == 1.0
    assert acc.fraction_of_conflicts_below(50) == 0.5


def test_accumulator_merge_is_additive():
    e = default_distance_bins()
    a, b = ConflictDistanceAccumulator(e), ConflictDistanceAccumulator(e)
    a.add([10], [10, 20], [10, 20, 30])
    b.add([700], [700], [700])
    m = a.merge(b)
    assert m.conflicts.sum() == 2 and m.pair_exposure.sum() == 3 and m.tx_exposure.sum() == 4
    with pytest.raises(ValueError):
        a.merge(ConflictDistanceAccumulator(default_distance_bins(100)))


@given(st.lists(st.tuples(st.floats(0, 2500), st.booleans()), max_size=60))
def test_probabilities_in_unit_interval(pairs):
    acc = ConflictDistanceAccumulator(default_distance_bins())
    acc.add([d for d, c in pairs if c], [d for d, _ in pairs], [d for d, _ in pairs] * 2)
    for p in (acc.per_pair(), acc.per_transmission()):
        v = p[~np.isnan(p)]
        assert ((v >= 0) & (v <= 1)).all()


def test_nonuniform_edges():
    acc = ConflictDistanceAccumulator(np.array([0.0, 10.0, 100.0, 1000.0]))
    acc.add(conflict_d=[5, 50, 500, 50_000])
    assert acc.conflicts.tolist() == [1, 1, 2]


# -- occupancy ------------------------------------------------------------------------------

def test_perfect_allocation():
    txs = [(u, CsrId(100 + u // 2, u % 2)) for u in range(200)]
    dist = rb_occupancy_distribution(txs, 100, GRID)
    assert dist.tolist() == [0, 200]


def test_pigeonhole():
    rng = np.random.default_rng(0)
    txs = [(u, CsrId(100 + int(rng.integers(100)), int(rng.integers(2)))) for u in range(300)]
    dist = rb_occupancy_distribution(txs, 100, GRID)
    assert dist.sum() == 200
    assert dist[2:].sum() > 0


def test_occupancy_counts_distinct_ues():
    txs = [(1, CsrId(0, 0)), (1, CsrId(0, 0)), (2, CsrId(0, 0))]
    assert rb_occupancy_distribution(txs, 0, GRID)[2] == 1


def test_occupancy_by_window_shape():
    tc = np.ones((250, 2), dtype=int)
    occ = occupancy_by_window(tc, 100)
    assert occ.shape == (2, 200) and (occ == 1).all()


# -- time series ------------------------------------------------------------------------------

def test_constant_distance_series():
    t = np.arange(0, 10_000, 7)
    pts = collision_distance_timeseries(t, np.full(len(t), 500.0), 500, 10_000)
    assert len(pts) == 20
    assert all(p.mean == p.median == p.p05 == p.p95 == 500.0 for p in pts)
    assert all(b.t_ms > a.t_ms for a, b in zip(pts, pts[1:]))


def test_two_phase_shift_detected():
    t = np.arange(0, 10_000, 5)
    d = np.where(t < 5000, 300.0, 900.0)
    pts = collision_distance_timeseries(t, d, 1000, 10_000)
    means = [p.mean for p in pts]
    assert means[:5] == [300.0] * 5 and means[5:] == [900.0] * 5


def test_empty_window_is_missing():
    pts = collision_distance_timeseries([100, 2100], [1.0, 2.0], 1000, 3000)
    assert [p.t_ms for p in pts] == [0, 2000]


def test_window_below_100ms_rejected():
    with pytest.raises(ValueError):
        collision_distance_timeseries([1], [1.0], 50, 100)


def test_dcc_timeseries_baseline_constants():
    snaps = [(t, np.full(4, 0.3), np.full(4, 100.0), np.full(4, 23.0)) for t in range(0, 1000, 100)]
    pts = dcc_timeseries(snaps, 100)
    assert all(p.mean_rate_hz == 10.0 and p.mean_power_dbm == 23.0 for p in pts)


def test_dcc_timeseries_itt_200_is_5hz():
    pts = dcc_timeseries([(0, [0.9], [200.0], [10.0])], 100)
    assert pts[0].mean_rate_hz == 5.0 and pts[0].mean_power_dbm == 10.0


# -- MAC delay ----------------------------------------------------------------------------------

def _records(itt, n, offset, grant_of=lambda i: 1):
    rows = []
    for i in range(n):
        g = offset + itt * i
        tx = g + (-(g - 37)) % 100  # reserved opportunities at 37 mod 100
        rows.append((0, grant_of(i), g, tx))
    return rows


def test_itt_100_constant():
    s = mac_delay_and_itt_phy(_records(100, 20, 5))[0]
    assert set(s.itt_phy_ms[1:]) == {100}
    assert set(s.delay_ms) == {32}


def test_itt_250_quantised():
    s = mac_delay_and_itt_phy(_records(250, 40, 5))[0]
    assert set(s.itt_phy_ms[1:]) == {200, 300}
    assert ((s.delay_ms >= 0) & (s.delay_ms < 100)).all()


def test_reselection_gap_reported_separately():
    recs = _records(100, 10, 5, grant_of=lambda i: 1 if i < 5 else 2)
    recs[5:] = [(0, 2, g, g + 3) for _, _, g, _ in recs[5:]]
    s = mac_delay_and_itt_phy(recs)[0]
    assert np.isnan(s.itt_phy_ms[5]) and s.reselection_gap_ms[5] == recs[5][3] - recs[4][3]
    assert np.nansum(~np.isnan(s.reselection_gap_ms)) == 1


# -- settling -------------------------------------------------------------------------------------

def test_constant_series_settles_at_zero():
    t = np.arange(0, 10_000, 100)
    assert settling_time(t, np.ones(len(t)), 0.1, 2000) == 0


def test_step_settles_at_step():
    t = np.arange(0, 10_000, 100)
    v = np.where(t < 3000, 0.0, 1.0)
    assert settling_time(t, v, 0.1, 2000) == 3000


def test_oscillation_never_settles():
    t = np.arange(0, 10_000, 100)
    v = np.where((t // 100) % 2 == 0, 0.5, 1.5)
    assert settling_time(t, v, 0.1, 2000) is None


def test_short_run_is_an_error():
    with pytest.raises(ValueError):
        settling_time([0, 1000], [1, 1], 0.1, 2000)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.5, 1.5), min_size=30, max_size=60), st.floats(0.01, 0.3), st.floats(0.0, 0.3))
def test_settling_monotone_in_band(vals, band, extra):
    t = np.arange(len(vals)) * 100
    narrow = settling_time(t, vals, band, 1000)
    wide = settling_time(t, vals, band + extra, 1000)
    if narrow is not None:
        assert wide is not None and wide <= narrow


# -- taxonomy ---------------------------------------------------------------------------------------

def test_taxonomy_counts():
    outs = [RxOutcome(True, FailureCause.NONE, 10.0)] * 3 + [RxOutcome(False, FailureCause.COLLISION, 0.0)]
    outs += ["half_duplex", "propagation"]
    assert failure_taxonomy(outs) == {"decoded": 3, "propagation": 1, "collision": 1, "half_duplex": 1}
