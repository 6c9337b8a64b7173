import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from _oracles import brute_force_exclusion, expected_shortlist_size, micro_instance
from v2xsim.grid import CsrId, GridConfig, csr_linear_index, window_csrs
from v2xsim.sps import (ContractViolation, DecodedReservation, Reservation, SensingBank, SensingWindow,
                        SpsConfig, build_shortlist, draw_rc, exclusion_step, mean_s_rssi_dbm,
                        on_transmit_opportunity, record_observation, select_resource, shortlist_size)

GRID = GridConfig()
CFG = SpsConfig()


# -- sensing window ---------------------------------------------------------------------

def test_record_single_observation():
    w = record_observation(SensingWindow(), 10, 0, -90.0)
    assert len(w.observations) == 1


def test_eviction_keeps_span():
    w = SensingWindow(1000)
    for s in range(1001):
        w.record_observation(s, 0, -90.0)
    assert len(w.observations) == 1000
    assert w.observations[0][0] == 1


def test_decoded_reservation_passes_through():
    w = SensingWindow().record_observation(5, 1, -80.0, DecodedReservation(5, 1, -81.0, 100))
    assert list(w.decoded_reservations) == [(5, 1, -81.0, 100)]


def test_observation_in_unmonitored_subframe_rejected():
    w = SensingWindow().record_transmission(7)
    with pytest.raises(ContractViolation):
        w.record_observation(7, 0, -90.0)


def test_window_cannot_rewind():
    w = SensingWindow().advance(100)
    with pytest.raises(ContractViolation):
        w.advance(50)


# -- exclusion ----------------------------------------------------------------------------

def test_empty_history_keeps_candidates():
    cands = set(window_csrs(1000, GRID))
    assert exclusion_step(cands, SensingWindow().advance(1000), -110) == cands


def test_single_projection_removed():
    w = SensingWindow().record_observation(950, 1, -79.0, DecodedReservation(950, 1, -80.0))
    w.advance(1000)
    left = exclusion_step(set(window_csrs(1000, GRID)), w, -110.0)
    assert left == set(window_csrs(1000, GRID)) - {CsrId(1050, 1)}


def test_weak_projection_kept():
    w = SensingWindow().record_observation(950, 1, -119.0, DecodedReservation(950, 1, -120.0))
    w.advance(1000)
    assert CsrId(1050, 1) in exclusion_step(set(window_csrs(1000, GRID)), w, -110.0)


def test_half_duplex_removes_congruent_subframes():
    w = SensingWindow().record_transmission(437).advance(1000)
    left = exclusion_step(set(window_csrs(1000, GRID)), w, -110.0)
    removed = set(window_csrs(1000, GRID)) - left
    assert removed == {CsrId(1037, 0), CsrId(1037, 1)}


def test_empty_candidates_is_a_contract_violation():
    with pytest.raises(ContractViolation):
        exclusion_step(set(), SensingWindow(), -110)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_exclusion_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    cands, own, decoded, w = micro_instance(rng)
    th = float(rng.uniform(-120, -70))
    assert exclusion_step(set(cands), w, th, horizon=1) == brute_force_exclusion(cands, own, decoded, th)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_shortlist_respects_final_threshold(seed):
    rng = np.random.default_rng(seed)
    cands, own, decoded, w = micro_instance(rng)
    sl = build_shortlist(cands, w, CFG)
    assert len(sl.csrs) == expected_shortlist_size(len(cands))
    oracle = brute_force_exclusion(cands, own, decoded, sl.threshold_dbm, half_duplex=not sl.half_duplex_dropped)
    assert sl.remaining == oracle
    assert set(sl.csrs) <= oracle
    if sl.relaxations:
        # one step less would not have been enough
        before = brute_force_exclusion(cands, own, decoded, sl.threshold_dbm - CFG.th_step_db)
        assert len(before) < len(sl.csrs)


@given(st.integers(1, 1000), st.sampled_from([0.1, 0.2, 0.25, 0.5, 1.0]))
def test_shortlist_size_is_ceiling(n, frac):
    from fractions import Fraction
    assert shortlist_size(n, frac) == max(1, math.ceil(Fraction(str(frac)) * n))


# -- selection ----------------------------------------------------------------------------

def test_select_with_empty_history():
    w = SensingWindow()
    rng = np.random.default_rng(1)
    sl = build_shortlist(window_csrs(1000, GRID), w.advance(1000), CFG)
    assert len(sl.csrs) == 40
    r = select_resource(1000, w, CFG, GRID, rng)
    assert CsrId(r.next_subframe, r.subchannel) in sl.csrs
    assert 5 <= r.rc <= 15
    assert 1000 <= r.next_subframe < 1100


def test_relaxation_when_pool_is_crowded():
    w = SensingWindow()
    busy = window_csrs(1000, GRID)[:190]
    for c in busy:
        s = c.subframe - 100
        w.record_observation(s, c.subchannel, -75.0, DecodedReservation(s, c.subchannel, -80.0))
    w.advance(1000)
    sl = build_shortlist(window_csrs(1000, GRID), w, CFG)
    assert sl.relaxations >= 1 and sl.threshold_dbm >= -80.0
    assert len(sl.csrs) == 40


def test_ranking_prefers_quiet_and_unsensed():
    w = SensingWindow()
    w.record_observation(900, 0, -60.0)
    w.record_observation(901, 0, -100.0)
    w.advance(1000)
    assert mean_s_rssi_dbm(CsrId(1000, 0), w) == pytest.approx(-60.0)
    assert mean_s_rssi_dbm(CsrId(1002, 0), w) == -math.inf
    sl = build_shortlist([CsrId(1000, 0), CsrId(1001, 0), CsrId(1002, 0)], w, SpsConfig(shortlist_fraction=0.6))
    assert sl.csrs == [CsrId(1002, 0), CsrId(1001, 0)]


def test_ranking_uses_linear_mean():
    w = SensingWindow()
    w.record_observation(800, 0, -60.0)
    w.record_observation(900, 0, -80.0)
    w.advance(1000)
    expect = 10 * math.log10((1e-6 + 1e-8) / 2)
    assert mean_s_rssi_dbm(CsrId(1000, 0), w) == pytest.approx(expect)


# -- reservation lifecycle ----------------------------------------------------------------

def test_opportunity_decrements():
    r = on_transmit_opportunity(Reservation(500, 1, 100, 5), CFG, np.random.default_rng(0), now=500)
    assert (r.rc, r.next_subframe, r.subchannel) == (4, 600, 1)


def test_last_opportunity_signals_reselection():
    assert on_transmit_opportunity(Reservation(500, 1, 100, 1), CFG, np.random.default_rng(0)) is None


def test_off_schedule_call_rejected():
    with pytest.raises(ContractViolation):
        on_transmit_opportunity(Reservation(500, 1, 100, 3), CFG, np.random.default_rng(0), now=501)


def test_keep_probability_rearms_same_csr():
    cfg = SpsConfig(prob_keep=0.8)
    rng = np.random.default_rng(11)
    kept = [on_transmit_opportunity(Reservation(500, 0, 100, 1), cfg, rng) for _ in range(2000)]
    for r in kept:
        if r is not None:
            assert (r.next_subframe, r.subchannel) == (600, 0) and 5 <= r.rc <= 15


def test_rc_draws_cover_range():
    rng = np.random.default_rng(3)
    draws = np.array([draw_rc(CFG, rng) for _ in range(20_000)])
    assert draws.min() == 5 and draws.max() == 15
    assert stats.chisquare(np.bincount(draws - 5, minlength=11)).pvalue > 0.01


def test_config_invariants():
    for bad in (SpsConfig(prob_keep=0.9), SpsConfig(rc_min=16), SpsConfig(shortlist_fraction=0)):
        with pytest.raises(ValueError):
            bad.validate()


# -- fleet sensing bank against the per-UE reference ---------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bank_matches_reference_window(seed):
    rng = np.random.default_rng(seed)
    n, S, now = 3, 2, 2300
    bank = SensingBank(n, S)
    cfg = SpsConfig(th_sps_dbm=float(rng.uniform(-110, -70)), sci_projection_periods=int(rng.integers(1, 4)))
    for t in range(now - 1000, now):
        srssi = 10 ** (rng.uniform(-110, -60, (n, S)) / 10)
        rsrp = np.where(rng.random((n, S)) < 0.5, rng.uniform(-120, -60, (n, S)), -np.inf)
        tx = np.flatnonzero(rng.random(n) < 0.02)
        bank.record_subframe(t, srssi, rsrp, tx)
    for ue in range(n):
        idx, th = bank.shortlist(ue, now, cfg, GRID)
        w = bank.window_for(ue, now)
        sl = build_shortlist(window_csrs(now, GRID), w, cfg)
        assert th == pytest.approx(sl.threshold_dbm)
        got = [window_csrs(now, GRID)[i] for i in idx]
        assert got == sl.csrs
        assert [csr_linear_index(c, now, GRID) for c in sl.csrs] == idx.tolist()
