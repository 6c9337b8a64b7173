import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from v2xsim import channel as ch
from v2xsim._kernels import link_budget
from v2xsim.channel import ChannelConfig, FailureCause
from v2xsim.grid import CsrId

CFG = ChannelConfig()
NOISE = ch.noise_floor_dbm(4.5e6, CFG)


def test_free_space_reference():
    # 20 log10(4 pi f / c), computed by hand for both carriers
    c = 299_792_458.0
    assert ch.free_space_reference_db(5860) == pytest.approx(20 * math.log10(4 * math.pi * 5.86e9 / c))
    assert ch.free_space_reference_db(5900) == pytest.approx(47.86, abs=0.01)


def test_path_loss_examples():
    assert ch.path_loss_db(1.0, CFG) == pytest.approx(47.86)
    assert ch.path_loss_db(100.0, CFG) == pytest.approx(87.86)
    assert ch.path_loss_db(0.2, CFG) == pytest.approx(47.86)  # clamped to 1 m


def test_path_loss_far_slope():
    pl200 = ch.path_loss_db(200.0, CFG)
    assert ch.path_loss_db(400.0, CFG) == pytest.approx(pl200 + 40 * math.log10(2))


@given(st.floats(0.0, 5000.0), st.floats(0.0, 5000.0))
def test_path_loss_monotone(a, b):
    lo, hi = sorted((a, b))
    assert ch.path_loss_db(lo, CFG) <= ch.path_loss_db(hi, CFG) + 1e-9


def test_received_power_at_one_metre():
    assert ch.received_power_dbm(23.0, 1.0, 0.0, CFG) == pytest.approx(-24.86)


def test_shadowing_statistics():
    rng = np.random.default_rng(7)
    s = ch.draw_shadowing(rng, 10_000, CFG)
    assert abs(s.std() - 3.0) <= 0.05 * 3.0
    assert not ch.draw_shadowing(rng, 5, ChannelConfig(shadow_sigma_db=0)).any()


def test_noise_floor():
    assert ch.noise_floor_dbm(4.5e6, CFG) == pytest.approx(-98.5, abs=0.05)
    assert ch.noise_floor_dbm(1.0, ChannelConfig(noise_figure_db=0)) == pytest.approx(-174.0)
    assert ch.noise_floor_dbm(9e6, CFG) - ch.noise_floor_dbm(4.5e6, CFG) == pytest.approx(3.0103, abs=1e-4)
    with pytest.raises(ValueError):
        ch.noise_floor_dbm(0, CFG)


def test_config_invariants():
    with pytest.raises(ValueError):
        ChannelConfig(n1=3, n2=2).validate()
    with pytest.raises(ValueError):
        ChannelConfig(shadow_sigma_db=-1).validate()


def test_sole_transmitter_decoded():
    out = ch.receive([(1, CsrId(0, 0), -60.0)], 0, False, CFG, NOISE)
    assert out[1].decoded and out[1].failure_cause is FailureCause.NONE


def test_equal_power_pair_collides():
    txs = [(1, CsrId(0, 0), -60.0), (2, CsrId(0, 0), -60.0)]
    out = ch.receive(txs, 0, False, CFG, NOISE)
    for o in out.values():
        assert o.failure_cause is FailureCause.COLLISION
        assert o.sinr_db == pytest.approx(0.0, abs=1e-3)


def test_receiver_transmitting_is_half_duplex():
    txs = [(1, CsrId(0, 0), -60.0), (2, CsrId(0, 1), -70.0)]
    out = ch.receive(txs, 0, True, CFG, NOISE)
    assert all(o.failure_cause is FailureCause.HALF_DUPLEX for o in out.values())


def test_weak_signal_is_propagation_loss():
    out = ch.receive([(1, CsrId(0, 0), NOISE)], 0, False, CFG, NOISE)
    assert out[1].failure_cause is FailureCause.PROPAGATION


def test_other_subchannel_does_not_interfere():
    txs = [(1, CsrId(0, 0), -60.0), (2, CsrId(0, 1), -40.0)]
    assert ch.receive(txs, 0, False, CFG, NOISE)[1].decoded


@given(st.lists(st.floats(-110, -40), min_size=2, max_size=6))
def test_removing_interferer_never_lowers_sinr(powers):
    txs = [(i + 1, CsrId(0, 0), p) for i, p in enumerate(powers)]
    full = ch.receive(txs, 0, False, CFG, NOISE)
    fewer = ch.receive(txs[:-1], 0, False, CFG, NOISE)
    for tx_id, o in fewer.items():
        assert o.sinr_db >= full[tx_id].sinr_db - 1e-9
        assert o.decoded == (o.failure_cause is FailureCause.NONE)


def test_classify_matches_receive():
    p = np.array([[-60.0, -70.0], [-61.0, -200.0]])
    sinr, snr, _ = ch.sinr_matrix(p, np.array([0, 0]), NOISE, 2)
    codes = ch.classify(sinr, snr, np.array([False, False]), CFG.sinr_threshold_db)
    for r in range(2):
        out = ch.receive([(10, CsrId(0, 0), p[0, r]), (11, CsrId(0, 0), p[1, r])], 99, False, CFG, NOISE)
        assert ch.CAUSE_CODES[codes[0, r]] is out[10].failure_cause
        assert ch.CAUSE_CODES[codes[1, r]] is out[11].failure_cause


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kernel_agrees_with_scalar_receive(seed):
    """The compiled per-subframe kernel against the scalar reference model."""
    rng = np.random.default_rng(seed)
    n, L, w, S = int(rng.integers(2, 12)), 3600.0, 3.5, 2
    x = rng.uniform(0, L, n)
    lane = rng.integers(0, 12, n)
    # cluster some vehicles so that decodes, collisions and losses all occur
    x[: n // 2] = rng.uniform(0, 300, n // 2)
    n_tx = int(rng.integers(1, n + 1))
    tx = np.sort(rng.choice(n, n_tx, replace=False)).astype(np.int64)
    sub = rng.integers(0, S, n_tx).astype(np.int64)
    pw = rng.uniform(10, 23, n_tx)
    shadow = rng.normal(0, 3, (n_tx, n)).astype(np.float32)
    noise_mw = 10 ** (NOISE / 10)

    hist = np.zeros(40, dtype=np.int64)
    heard = np.full((n, n), -1, dtype=np.int64)
    total = np.empty((n, S))
    rsrp = np.empty((n, S))
    causes = np.zeros(4, dtype=np.int64)
    tt = np.empty((n_tx, n_tx))
    link_budget(tx, sub, pw, x, lane, L, w, shadow, CFG.pl0_db, CFG.n1, CFG.n2, CFG.breakpoint_m,
                noise_mw, 10 ** (CFG.sinr_threshold_db / 10), S, 50.0, hist, heard, 5, total, rsrp, causes, tt)

    def dist(a, b):
        dx = abs(x[a] - x[b]) % L
        return math.hypot(min(dx, L - dx), (lane[a] - lane[b]) * w)

    expect = np.zeros(4, dtype=np.int64)
    exp_total = np.zeros((n, S))
    for r in range(n):
        txs = []
        for i, j in enumerate(tx):
            if j == r:
                continue
            p = pw[i] - ch.path_loss_db(dist(j, r), CFG) + float(shadow[i, r])
            txs.append((int(j), CsrId(5, int(sub[i])), p))
            exp_total[r, sub[i]] += 10 ** (p / 10)
        out = ch.receive(txs, r, bool(np.isin(r, tx)), CFG, NOISE)
        for j, o in out.items():
            expect[ch.CAUSE_CODES.index(o.failure_cause)] += 1
            assert (heard[r, j] == 5) == o.decoded
    assert causes.tolist() == expect.tolist()
    np.testing.assert_allclose(total, exp_total, rtol=1e-9)
    assert hist.sum() == n_tx * (n - 1)
    for i, a in enumerate(tx):
        for k, b in enumerate(tx):
            assert tt[i, k] == pytest.approx(dist(a, b))
