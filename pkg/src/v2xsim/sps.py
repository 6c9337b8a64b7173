"""Sensing-based semi-persistent scheduling (SB-SPS).

Two representations of the sensing history share one selection procedure:

* :class:`SensingWindow` keeps explicit observation lists for a single UE and
  works on arbitrary candidate sets. It is the reference path.
* :class:`SensingBank` keeps ring buffers for every UE of a simulation and is
  what the engine uses; it reproduces the reference path exactly when the
  candidate set is a full selection window.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import CsrId, GridConfig, window_csrs


class ContractViolation(ValueError):
    """A caller broke an operation precondition."""


@dataclass(frozen=True)
class SpsConfig:
    th_sps_dbm: float = -110.0
    th_step_db: float = 3.0
    shortlist_fraction: float = 0.20
    rc_min: int = 5
    rc_max: int = 15
    prob_keep: float = 0.0
    sensing_span_ms: int = 1000
    # how many periods ahead a decoded reservation is projected (1 = next instance only)
    sci_projection_periods: int = 1
    # reserved opportunities without a packet also consume the counter
    rc_counts_idle: bool = True

    def validate(self) -> None:
        if not 0 < self.shortlist_fraction <= 1:
            raise ValueError("shortlist_fraction must lie in (0, 1]")
        if not 0 <= self.prob_keep <= 0.8:
            raise ValueError("prob_keep must lie in [0, 0.8]")
        if not 1 <= self.rc_min <= self.rc_max:
            raise ValueError("need 1 <= rc_min <= rc_max")
        if self.th_step_db <= 0:
            raise ValueError("th_step_db must be positive")
        if self.sensing_span_ms < 1:
            raise ValueError("sensing_span_ms must be >= 1")
        if self.sci_projection_periods < 1:
            raise ValueError("sci_projection_periods must be >= 1")


@dataclass(frozen=True)
class Reservation:
    next_subframe: int
    subchannel: int
    period_ms: int = 100
    rc: int = 0


@dataclass(frozen=True)
class DecodedReservation:
    subframe: int
    subchannel: int
    rsrp_dbm: float
    period_ms: int = 100


@dataclass
class SensingWindow:
    """Rolling sensing history of one UE over ``[now - span_ms, now)``."""

    span_ms: int = 1000
    observations: deque = field(default_factory=deque)
    decoded_reservations: deque = field(default_factory=deque)
    unmonitored_subframes: deque = field(default_factory=deque)
    now: int | None = None

    def _bump(self, subframe: int) -> None:
        if self.now is None or subframe + 1 > self.now:
            self.advance(subframe + 1)

    def advance(self, now: int) -> "SensingWindow":
        """Move the window end to ``now`` and evict what fell out."""
        if self.now is not None and now < self.now:
            raise ContractViolation("sensing window cannot move backwards")
        self.now = now
        start = now - self.span_ms
        for q in (self.observations, self.decoded_reservations):
            while q and q[0][0] < start:
                q.popleft()
        while self.unmonitored_subframes and self.unmonitored_subframes[0] < start:
            self.unmonitored_subframes.popleft()
        return self

    def record_transmission(self, subframe: int) -> "SensingWindow":
        if any(o[0] == subframe for o in self.observations):
            raise ContractViolation(f"subframe {subframe} already carries observations")
        self._bump(subframe)
        if subframe not in self.unmonitored_subframes:
            self.unmonitored_subframes.append(subframe)
        return self

    def record_observation(self, subframe: int, subchannel: int, s_rssi_dbm: float,
                           decoded: DecodedReservation | None = None) -> "SensingWindow":
        if subframe in self.unmonitored_subframes:
            raise ContractViolation(f"subframe {subframe} is unmonitored (half-duplex)")
        self._bump(subframe)
        self.observations.append((subframe, subchannel, s_rssi_dbm))
        if decoded is not None:
            self.decoded_reservations.append(
                (decoded.subframe, decoded.subchannel, decoded.rsrp_dbm, decoded.period_ms))
        return self


def record_observation(w: SensingWindow, subframe: int, subchannel: int, s_rssi_dbm: float,
                       decoded: DecodedReservation | None = None) -> SensingWindow:
    return w.record_observation(subframe, subchannel, s_rssi_dbm, decoded)


def _half_duplex_blocked(csr: CsrId, w: SensingWindow, period_ms: int) -> bool:
    return any((csr.subframe - u) % period_ms == 0 for u in w.unmonitored_subframes)


def projects_onto(csr: CsrId, subframe: int, subchannel: int, period_ms: int, horizon: int | None) -> bool:
    """Whether a reservation decoded at ``(subframe, subchannel)`` claims ``csr``.

    The reservation repeats every ``period_ms`` after ``subframe``; ``horizon``
    limits how many repetitions are projected (``None``: unlimited).
    """
    gap = csr.subframe - subframe
    if subchannel != csr.subchannel or gap <= 0 or gap % period_ms:
        return False
    return horizon is None or gap <= horizon * period_ms


def _reservation_blocked(csr: CsrId, w: SensingWindow, th_dbm: float, horizon: int | None) -> bool:
    return any(
        rsrp > th_dbm and projects_onto(csr, s, k, period, horizon)
        for s, k, rsrp, period in w.decoded_reservations
    )


def exclusion_step(candidates, w: SensingWindow, th_dbm: float, period_ms: int = 100,
                   half_duplex: bool = True, horizon: int | None = None) -> set:
    """Drop candidates blocked by our own past transmissions or by decoded
    reservations stronger than ``th_dbm``."""
    if not candidates:
        raise ContractViolation("candidate set is empty")
    return {
        c for c in candidates
        if not (half_duplex and _half_duplex_blocked(c, w, period_ms))
        and not _reservation_blocked(c, w, th_dbm, horizon)
    }


def mean_s_rssi_dbm(csr: CsrId, w: SensingWindow, period_ms: int = 100) -> float:
    """Linear-average S-RSSI over sensed subframes aligned with ``csr``; -inf if none."""
    vals = [10.0 ** (r / 10.0) for s, k, r in w.observations
            if k == csr.subchannel and (csr.subframe - s) % period_ms == 0]
    if not vals:
        return -math.inf
    return 10.0 * math.log10(sum(vals) / len(vals))


@dataclass(frozen=True)
class Shortlist:
    csrs: list
    remaining: frozenset
    threshold_dbm: float
    relaxations: int
    half_duplex_dropped: bool = False


def shortlist_size(n_candidates: int, fraction: float) -> int:
    # guard against 0.2 * 200 = 40.00000000000001
    return max(1, math.ceil(round(fraction * n_candidates, 9)))


def build_shortlist(candidates, w: SensingWindow, cfg: SpsConfig, period_ms: int = 100) -> Shortlist:
    """Exclusion with threshold relaxation, then the lowest-RSSI fraction.

    The threshold is raised by ``th_step_db`` until at least
    ``ceil(shortlist_fraction * len(candidates))`` candidates survive. If that
    cannot happen through the threshold alone, half-duplex exclusion is lifted.
    """
    candidates = sorted(set(candidates))
    need = shortlist_size(len(candidates), cfg.shortlist_fraction)
    horizon = cfg.sci_projection_periods
    strongest = max((rsrp for s, k, rsrp, p in w.decoded_reservations
                     if any(projects_onto(c, s, k, p, horizon) for c in candidates)), default=-math.inf)
    th = cfg.th_sps_dbm
    relaxations = 0
    hd = True
    remaining = exclusion_step(candidates, w, th, period_ms, horizon=horizon)
    while len(remaining) < need:
        if th >= strongest:
            hd = False
            remaining = exclusion_step(candidates, w, th, period_ms, half_duplex=False, horizon=horizon)
            break
        th += cfg.th_step_db
        relaxations += 1
        remaining = exclusion_step(candidates, w, th, period_ms, horizon=horizon)
    ranked = sorted(remaining, key=lambda c: (mean_s_rssi_dbm(c, w, period_ms), c))
    return Shortlist(ranked[:need], frozenset(remaining), th, relaxations, not hd)


def draw_rc(cfg: SpsConfig, rng: np.random.Generator) -> int:
    """Reselection counter, uniform over ``[rc_min, rc_max]``."""
    return int(rng.integers(cfg.rc_min, cfg.rc_max + 1))


def _draw(shortlist: list, cfg: SpsConfig, period_ms: int, rng: np.random.Generator) -> Reservation:
    pick = shortlist[int(rng.integers(len(shortlist)))]
    rc = draw_rc(cfg, rng)
    return Reservation(pick.subframe, pick.subchannel, period_ms, rc)


def select_resource(now: int, w: SensingWindow, cfg: SpsConfig, grid: GridConfig,
                    rng: np.random.Generator) -> Reservation:
    """Pick a new semi-persistent grant for a packet generated at ``now``."""
    w.advance(now)
    candidates = window_csrs(now + grid.selection_offset_subframes, grid)
    sl = build_shortlist(candidates, w, cfg, grid.reservation_period_ms)
    return _draw(sl.csrs, cfg, grid.reservation_period_ms, rng)


def on_transmit_opportunity(r: Reservation, cfg: SpsConfig, rng: np.random.Generator,
                            now: int | None = None) -> Reservation | None:
    """Consume one reserved transmission.

    Returns the advanced reservation, or ``None`` when the reselection
    counter expired and the grant is not kept (reselection signal).
    """
    if now is not None and now != r.next_subframe:
        raise ContractViolation(f"opportunity at {r.next_subframe}, called at {now}")
    if r.rc <= 0:
        raise ContractViolation("reservation has no remaining transmissions")
    rc = r.rc - 1
    nxt = r.next_subframe + r.period_ms
    if rc == 0:
        if rng.random() < cfg.prob_keep:
            rc = draw_rc(cfg, rng)
        else:
            return None
    return replace(r, next_subframe=nxt, rc=rc)


class SensingBank:
    """Ring-buffered sensing history for ``n`` UEs.

    Row ``s % span`` holds subframe ``s``. S-RSSI is stored in mW (NaN where
    the UE was transmitting or nothing was recorded), RSRP of decoded
    reservations in dBm (-inf where none). All reservations share one period,
    which must divide the span.
    """

    def __init__(self, n: int, n_subchannels: int, span_ms: int = 1000, period_ms: int = 100):
        if span_ms % period_ms:
            raise ValueError("sensing span must be a multiple of the reservation period")
        self.n, self.n_sub, self.span, self.period = n, n_subchannels, span_ms, period_ms
        self.srssi_mw = np.full((span_ms, n, n_subchannels), np.nan)
        self.rsrp_dbm = np.full((span_ms, n, n_subchannels), -np.inf)
        self.own_tx = np.zeros((span_ms, n), dtype=bool)

    def record_subframe(self, t: int, srssi_mw: np.ndarray, rsrp_dbm: np.ndarray,
                        transmitters: np.ndarray) -> None:
        row = t % self.span
        self.srssi_mw[row] = srssi_mw
        self.srssi_mw[row, transmitters] = np.nan
        self.rsrp_dbm[row] = rsrp_dbm
        self.own_tx[row] = False
        self.own_tx[row, transmitters] = True

    def busy_counts(self, t_end: int, window_ms: int, threshold_dbm: float):
        """Busy and monitored subframe counts per UE over ``[t_end - window_ms, t_end)``."""
        rows = np.arange(t_end - window_ms, t_end) % self.span
        block = self.srssi_mw[rows]
        monitored = ~np.isnan(block[:, :, 0])
        with np.errstate(invalid="ignore"):
            busy = (np.nanmax(np.where(np.isnan(block), -np.inf, block), axis=2)
                    > 10.0 ** (threshold_dbm / 10.0)) & monitored
        return busy.sum(axis=0), monitored.sum(axis=0)

    def per_residue(self, ue: int):
        """Half-duplex flags and mean S-RSSI per residue class of the period."""
        reps = self.span // self.period
        hd = self.own_tx[:, ue].reshape(reps, self.period).any(axis=0)
        s = self.srssi_mw[:, ue, :].reshape(reps, self.period, self.n_sub)
        sensed = ~np.isnan(s)
        cnt = sensed.sum(axis=0)
        tot = np.where(sensed, s, 0.0).sum(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            mean_dbm = np.where(cnt > 0, 10.0 * np.log10(tot / np.maximum(cnt, 1)), -np.inf)
        return hd, mean_dbm

    def projected_rsrp(self, ue: int, subframes: np.ndarray, now: int, horizon: int) -> np.ndarray:
        """Strongest decoded RSRP projecting onto each candidate subframe, per subchannel.

        Only sensed subframes in ``[now - span, now)`` contribute.
        """
        q = np.arange(1, horizon + 1)
        src = subframes[None, :] - q[:, None] * self.period
        valid = (src >= now - self.span) & (src < now)
        vals = self.rsrp_dbm[src % self.span, ue, :]
        vals = np.where(valid[:, :, None], vals, -np.inf)
        return vals.max(axis=0)

    def shortlist(self, ue: int, now: int, cfg: SpsConfig, grid: GridConfig):
        """Shortlist as linear indices within the window starting at ``now + T1``."""
        hd, mean_dbm = self.per_residue(ue)
        start = now + grid.selection_offset_subframes
        subframes = start + np.arange(grid.selection_window_subframes)
        res = subframes % self.period
        cand_rsrp = self.projected_rsrp(ue, subframes, now, cfg.sci_projection_periods).ravel()
        cand_hd = np.repeat(hd[res], self.n_sub)
        cand_rssi = mean_dbm[res].ravel()
        total = cand_rsrp.size
        need = shortlist_size(total, cfg.shortlist_fraction)
        strongest = cand_rsrp.max()
        th = cfg.th_sps_dbm
        ok = ~cand_hd & ~(cand_rsrp > th)
        while ok.sum() < need:
            if th >= strongest:
                ok = ~(cand_rsrp > th)
                break
            th += cfg.th_step_db
            ok = ~cand_hd & ~(cand_rsrp > th)
        idx = np.flatnonzero(ok)
        order = np.lexsort((idx, cand_rssi[idx]))
        return idx[order[:need]], th

    def select(self, ue: int, now: int, cfg: SpsConfig, grid: GridConfig,
               rng: np.random.Generator) -> Reservation:
        sl, _ = self.shortlist(ue, now, cfg, grid)
        start = now + grid.selection_offset_subframes
        pick = int(sl[int(rng.integers(len(sl)))])
        rc = draw_rc(cfg, rng)
        offset, sub = divmod(pick, self.n_sub)
        return Reservation(start + offset, sub, self.period, rc)

    def window_for(self, ue: int, now: int) -> SensingWindow:
        """Export one UE's history as a :class:`SensingWindow` (for cross-checks)."""
        w = SensingWindow(self.span)
        for s in range(now - self.span, now):
            row = s % self.span
            if self.own_tx[row, ue]:
                w.record_transmission(s)
                continue
            for k in range(self.n_sub):
                v = self.srssi_mw[row, ue, k]
                if np.isnan(v):
                    continue
                r = self.rsrp_dbm[row, ue, k]
                dec = DecodedReservation(s, k, float(r), self.period) if np.isfinite(r) else None
                w.record_observation(s, k, float(10.0 * np.log10(v)), dec)
        w.advance(now)
        return w
