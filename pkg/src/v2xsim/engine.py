"""Subframe-granular simulation loop.

Per subframe: mobility and DCC on control ticks, BSM generation, MAC mapping
onto semi-persistent grants, transmission, SINR-based reception and sensing,
then metric collection. Every random draw comes from a substream keyed by
``(seed, purpose[, id])`` so results do not depend on iteration order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import channel as ch
from .channel import ChannelConfig
from .dcc import DccBank, DccConfig
from .grid import GridConfig
from .metrics import ConflictDistanceAccumulator, default_distance_bins
from ._kernels import link_budget
from .mobility import Fleet, Scenario, build_scenario, ring_delta
from .mobility import step as mobility_step
from .sps import Reservation, SensingBank, SpsConfig, on_transmit_opportunity

log = logging.getLogger(__name__)

# RNG purposes
_OFFSET, _SPS, _SHADOW, _MOBILITY = 1, 2, 3, 4
_NEVER = -(10**9)


def substream(seed: int, purpose: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([seed, purpose, *key])


@dataclass(frozen=True)
class SimConfig:
    duration_ms: int = 120_000
    seed: int = 1
    dcc_enabled: bool = False
    payload_bytes: int = 190
    mobility_tick_ms: int = 100
    # metric collectors ignore subframes before this time
    warmup_ms: int = 0
    distance_bin_m: float = 50.0
    distance_max_m: float = 2000.0
    record_collisions: bool = True

    def validate(self) -> None:
        if self.duration_ms <= 0:
            raise ValueError("duration_ms must be positive")
        if self.mobility_tick_ms < 1:
            raise ValueError("mobility_tick_ms must be >= 1")
        if not 0 <= self.warmup_ms < self.duration_ms:
            raise ValueError("warmup_ms must lie in [0, duration_ms)")
        if self.payload_bytes < 1:
            raise ValueError("payload_bytes must be >= 1")
        if self.distance_bin_m <= 0 or self.distance_max_m <= self.distance_bin_m:
            raise ValueError("invalid distance binning")


@dataclass
class SimResult:
    n_ue: int
    duration_ms: int
    dcc_enabled: bool
    packets: dict            # column arrays, one row per transmitted packet
    collisions: dict         # column arrays, one row per same-CSR pair
    conflict_hist: ConflictDistanceAccumulator
    tx_counts: np.ndarray    # (subframes, subchannels) transmitters per CSR
    dcc_trace: dict          # column arrays, one row per control tick
    taxonomy: dict
    generated: int
    replaced: int
    pending_at_end: int
    generation_log: dict = field(default_factory=dict)


class Simulation:
    def __init__(self, fleet: Fleet, sim: SimConfig, sps: SpsConfig, dcc: DccConfig,
                 channel: ChannelConfig, grid: GridConfig, start_offsets_ms=None):
        for c in (sim, sps, dcc, channel, grid):
            c.validate()
        if sim.mobility_tick_ms != dcc.control_tick_ms:
            raise ValueError("mobility tick and DCC control tick must coincide")
        self.fleet = fleet.copy()
        self.sim, self.sps, self.dcc_cfg, self.ch, self.grid = sim, sps, dcc, channel, grid
        n = self.n = len(fleet)
        S = self.n_sub = grid.subchannels_per_subframe
        self.period = grid.reservation_period_ms
        self.noise_dbm = ch.noise_floor_dbm(grid.subchannel_bandwidth_hz, channel)
        self.noise_mw = 10.0 ** (self.noise_dbm / 10.0)

        if start_offsets_ms is None:
            start_offsets_ms = substream(sim.seed, _OFFSET).integers(0, 100, size=n)
        self.next_gen = np.asarray(start_offsets_ms, dtype=np.int64).copy()
        self.last_gen = np.full(n, _NEVER, dtype=np.int64)
        self.pending_gen = np.full(n, -1, dtype=np.int64)
        self.res_next = np.full(n, -1, dtype=np.int64)
        self.res_sub = np.zeros(n, dtype=np.int64)
        self.res_rc = np.zeros(n, dtype=np.int64)
        self.grant = np.full(n, -1, dtype=np.int64)
        self._grant_counter = np.zeros(n, dtype=np.int64)
        self.ue_rng = [substream(sim.seed, _SPS, u) for u in range(n)]
        self.mob_rng = substream(sim.seed, _MOBILITY)

        self.bank = SensingBank(n, S, sps.sensing_span_ms, self.period)
        self.dcc = DccBank(n, dcc, enabled=sim.dcc_enabled)
        if not sim.dcc_enabled:
            self.dcc.itt_ms[:] = 100.0
            self.dcc.tx_power_dbm[:] = dcc.p_max_dbm
        self.last_heard = np.full((n, n), _NEVER, dtype=np.int64 if n < 512 else np.int32)
        self.snap_x = np.full(n, np.nan)
        self.snap_v = np.zeros(n)
        self.snap_t = np.zeros(n)
        self.fleet_time = 0

        self.generated = 0
        self.replaced = 0
        self._pk = {k: [] for k in ("ue_id", "grant_id", "generation_ms", "transmission_ms",
                                    "subchannel", "tx_power_dbm")}
        self._col = {k: [] for k in ("time_ms", "subchannel", "ue_a", "ue_b", "distance_m")}
        self._gen_log = {"ue_id": [], "generation_ms": [], "forced": []}
        self._dcc = {k: [] for k in ("t_ms", "mean_cbp", "mean_rate_hz", "mean_power_dbm",
                                     "mean_itt_ms", "max_itt_ms", "mean_density")}
        self.hist = ConflictDistanceAccumulator(default_distance_bins(sim.distance_bin_m, sim.distance_max_m))
        self.tx_counts = np.zeros((sim.duration_ms, S), dtype=np.int32)
        self.taxonomy = np.zeros(4, dtype=np.int64)
        self.t = 0

    # -- test hooks -----------------------------------------------------------------
    def force_reservation(self, ue: int, subframe: int, subchannel: int, rc: int = 15) -> None:
        self.res_next[ue], self.res_sub[ue], self.res_rc[ue] = subframe, subchannel, rc
        self._grant_counter[ue] += 1
        self.grant[ue] = self._grant_counter[ue]

    # -- helpers -----------------------------------------------------------------------
    def _position_at(self, idx, t):
        return (self.fleet.x[idx] + self.fleet.v[idx] * (t - self.fleet_time) / 1000.0) % self.fleet.road_length_m

    def _density(self, t: int) -> np.ndarray:
        f = self.fleet
        pts = np.column_stack([f.x, f.y])
        box = [f.road_length_m, max(1e6, 4 * (f.y.max() + 1))]
        pairs = cKDTree(pts, boxsize=box).query_pairs(self.dcc_cfg.density_radius_m, output_type="ndarray")
        counts = np.zeros(self.n, dtype=np.int64)
        if len(pairs):
            a, b = pairs[:, 0], pairs[:, 1]
            win = self.dcc_cfg.heard_within_ms
            np.add.at(counts, a, (t - self.last_heard[a, b]) <= win)
            np.add.at(counts, b, (t - self.last_heard[b, a]) <= win)
        return counts

    def _control_tick(self, t: int) -> None:
        if t > 0:
            mobility_step(self.fleet, t - self.fleet_time, self.mob_rng)
            self.fleet_time = t
            density = self._density(t)
            w = min(self.dcc_cfg.cbp_window_ms, t)
            busy, monitored = self.bank.busy_counts(t, w, self.dcc_cfg.cbp_busy_threshold_dbm)
            self.dcc.update(density, busy, monitored)
            if not self.sim.dcc_enabled:
                self.dcc.itt_ms[:] = 100.0
            else:
                started = self.last_gen > _NEVER
                self.next_gen[started] = self.last_gen[started] + np.round(self.dcc.itt_ms[started]).astype(np.int64)
                self._pte_override(t)
            if t >= self.sim.warmup_ms:
                d = self._dcc
                d["t_ms"].append(t)
                d["mean_cbp"].append(float(self.dcc.cbp.mean()))
                d["mean_rate_hz"].append(float((1000.0 / self.dcc.itt_ms).mean()))
                d["mean_power_dbm"].append(float(self.dcc.tx_power_dbm.mean()))
                d["mean_itt_ms"].append(float(self.dcc.itt_ms.mean()))
                d["max_itt_ms"].append(float(self.dcc.itt_ms.max()))
                d["mean_density"].append(float(self.dcc.smoothed_density.mean()))

    def _pte_override(self, t: int) -> None:
        have = ~np.isnan(self.snap_x)
        if not have.any():
            return
        pred = self.snap_x[have] + self.snap_v[have] * (t - self.snap_t[have]) / 1000.0
        pte = ring_delta(self.fleet.x[have], pred, self.fleet.road_length_m)
        force = np.flatnonzero(have)[pte > self.dcc_cfg.pte_threshold_m]
        self.next_gen[force] = t
        self._forced = set(force.tolist())

    # -- main loop ----------------------------------------------------------------------
    def step(self) -> None:
        t = self.t
        self._forced = set()
        if t % self.sim.mobility_tick_ms == 0:
            self._control_tick(t)
        self._generate(t)
        tx = self._transmit(t)
        self._propagate(t, tx)
        self.t += 1

    def _generate(self, t: int) -> None:
        gens = np.flatnonzero(self.next_gen <= t)
        if not gens.size:
            return
        self.generated += gens.size
        self.replaced += int((self.pending_gen[gens] >= 0).sum())
        self.pending_gen[gens] = t
        self.last_gen[gens] = t
        itt = np.round(self.dcc.itt_ms[gens]).astype(np.int64) if self.sim.dcc_enabled else 100
        self.next_gen[gens] = t + itt
        g = self._gen_log
        for u in gens.tolist():
            g["ue_id"].append(u)
            g["generation_ms"].append(t)
            g["forced"].append(u in self._forced)
            if self.res_next[u] < 0:
                r = self.bank.select(u, t, self.sps, self.grid, self.ue_rng[u])
                self.res_next[u], self.res_sub[u], self.res_rc[u] = r.next_subframe, r.subchannel, r.rc
                self._grant_counter[u] += 1
                self.grant[u] = self._grant_counter[u]

    def _transmit(self, t: int) -> np.ndarray:
        opp = np.flatnonzero(self.res_next == t)
        if not opp.size:
            return opp
        has_pkt = self.pending_gen[opp] >= 0
        idle = opp[~has_pkt]
        if self.sps.rc_counts_idle:
            self._advance(idle, t)
        else:
            self.res_next[idle] += self.period
        tx = opp[has_pkt]
        pk = self._pk
        for u in tx.tolist():
            pk["ue_id"].append(u)
            pk["grant_id"].append(int(self.grant[u]))
            pk["generation_ms"].append(int(self.pending_gen[u]))
            pk["transmission_ms"].append(t)
            pk["subchannel"].append(int(self.res_sub[u]))
            pk["tx_power_dbm"].append(float(self.dcc.tx_power_dbm[u]))
            self.pending_gen[u] = -1
        self._advance(tx, t)
        self.snap_x[tx] = self._position_at(tx, t)
        self.snap_v[tx] = self.fleet.v[tx]
        self.snap_t[tx] = t
        return tx

    def _advance(self, ues: np.ndarray, t: int) -> None:
        for u in ues.tolist():
            r = on_transmit_opportunity(
                Reservation(t, int(self.res_sub[u]), self.period, int(self.res_rc[u])),
                self.sps, self.ue_rng[u], now=t)
            if r is None:
                self.res_next[u] = -1
            else:
                self.res_next[u], self.res_rc[u] = r.next_subframe, r.rc

    def _propagate(self, t: int, tx: np.ndarray) -> None:
        n, S = self.n, self.n_sub
        collect = t >= self.sim.warmup_ms
        if not tx.size:
            self.bank.record_subframe(t, np.full((n, S), self.noise_mw), np.full((n, S), -np.inf), tx)
            return
        sub = self.res_sub[tx]
        shadow = ch.draw_shadowing(substream(self.sim.seed, _SHADOW, t), (tx.size, n), self.ch)
        total = np.empty((n, S))
        rsrp = np.empty((n, S))
        causes = np.zeros(4, dtype=np.int64)
        tx_hist = np.zeros_like(self.hist.tx_exposure)
        tt = np.empty((tx.size, tx.size))
        c = self.ch
        link_budget(tx, sub, self.dcc.tx_power_dbm[tx], self.fleet.x, self.fleet.lane,
                    self.fleet.road_length_m, self.fleet.lane_width_m, shadow,
                    c.pl0_db, c.n1, c.n2, c.breakpoint_m, self.noise_mw,
                    10.0 ** (c.sinr_threshold_db / 10.0), S, self.sim.distance_bin_m,
                    tx_hist, self.last_heard, t, total, rsrp, causes, tt)
        self.bank.record_subframe(t, total + self.noise_mw, rsrp, tx)
        if not collect:
            return
        self.taxonomy += causes
        self.tx_counts[t] = np.bincount(sub, minlength=S)
        self.hist.tx_exposure += tx_hist
        pair_d, conf_d = [], []
        if tx.size > 1:
            iu, ju = np.triu_indices(tx.size, 1)
            pd_ = tt[iu, ju]
            pair_d = pd_
            same = sub[iu] == sub[ju]
            conf_d = pd_[same]
            if self.sim.record_collisions and same.any():
                c = self._col
                for a, b, k, d in zip(tx[iu[same]].tolist(), tx[ju[same]].tolist(),
                                      sub[iu[same]].tolist(), conf_d.tolist()):
                    c["time_ms"].append(t)
                    c["subchannel"].append(k)
                    c["ue_a"].append(a)
                    c["ue_b"].append(b)
                    c["distance_m"].append(d)
        self.hist.add(conf_d, pair_d)

    def run(self) -> SimResult:
        while self.t < self.sim.duration_ms:
            self.step()
        return self.result()

    def result(self) -> SimResult:
        pk = {k: np.asarray(v) for k, v in self._pk.items()}
        col = {k: np.asarray(v) for k, v in self._col.items()}
        return SimResult(
            n_ue=self.n,
            duration_ms=self.sim.duration_ms,
            dcc_enabled=self.sim.dcc_enabled,
            packets=pk,
            collisions=col,
            conflict_hist=self.hist,
            tx_counts=self.tx_counts,
            dcc_trace={k: np.asarray(v) for k, v in self._dcc.items()},
            taxonomy=dict(zip(("decoded", "propagation", "collision", "half_duplex"), self.taxonomy.tolist())),
            generated=self.generated,
            replaced=self.replaced,
            pending_at_end=int((self.pending_gen >= 0).sum()),
            generation_log={k: np.asarray(v) for k, v in self._gen_log.items()},
        )


def run(fleet: Fleet, sim: SimConfig, sps: SpsConfig, dcc: DccConfig, channel: ChannelConfig,
        grid: GridConfig) -> SimResult:
    return Simulation(fleet, sim, sps, dcc, channel, grid).run()


def simulate(scenario: Scenario | str, sim: SimConfig, sps: SpsConfig | None = None,
             dcc: DccConfig | None = None, channel: ChannelConfig | None = None,
             grid: GridConfig | None = None) -> SimResult:
    """Place the scenario's fleet with ``sim.seed`` and run it."""
    fleet = build_scenario(scenario, sim.seed)
    return run(fleet, sim, sps or SpsConfig(), dcc or DccConfig(), channel or ChannelConfig(),
               grid or GridConfig())


def mac_enqueue(generation_ms: int, reservation: Reservation | None) -> int:
    """Transmission time of a packet: the first reserved opportunity at or after generation."""
    if reservation is None:
        raise LookupError("no active reservation; select a resource first")
    nxt, p = reservation.next_subframe, reservation.period_ms
    return generation_ms + (nxt - generation_ms) % p
