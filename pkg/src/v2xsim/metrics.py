"""Spatio-temporal network metrics: conflict distances, resource occupancy,
DCC traces, MAC delay / ITT quantisation and settling time."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .channel import FailureCause, RxOutcome
from .grid import CsrId, GridConfig, csr_linear_index


@dataclass(frozen=True)
class CollisionEvent:
    time_ms: int
    csr: CsrId
    ue_a: int
    ue_b: int
    distance_m: float

    def __post_init__(self):
        if self.ue_a == self.ue_b:
            raise ValueError("a collision needs two distinct UEs")
        if self.distance_m < 0:
            raise ValueError("distance must be non-negative")


def conflicts_in_subframe(time_ms: int, transmissions, distance) -> list[CollisionEvent]:
    """One event per unordered pair of UEs sharing a CSR.

    ``transmissions`` is a sequence of ``(ue_id, CsrId)``; ``distance(a, b)``
    returns the pair separation in metres.
    """
    by_csr: dict[CsrId, list[int]] = {}
    for ue, csr in transmissions:
        by_csr.setdefault(csr, []).append(ue)
    events = []
    for csr in sorted(by_csr):
        for a, b in combinations(sorted(by_csr[csr]), 2):
            events.append(CollisionEvent(time_ms, csr, a, b, float(distance(a, b))))
    return events


def default_distance_bins(width_m: float = 50.0, max_m: float = 2000.0) -> np.ndarray:
    return np.arange(0.0, max_m + width_m / 2, width_m)


class ConflictDistanceAccumulator:
    """Streaming counts behind the conflict-probability-vs-distance histogram.

    * ``conflicts``: same-CSR pairs per distance bin.
    * ``pair_exposure``: pairs of UEs transmitting in the same subframe.
    * ``tx_exposure``: (transmission, other UE) pairs, i.e. every UE that was
      at that distance from a transmitter when it transmitted.

    Distances beyond the last edge land in the last bin.
    """

    def __init__(self, edges: np.ndarray):
        self.edges = np.asarray(edges, dtype=float)
        nb = len(self.edges) - 1
        widths = np.diff(self.edges)
        self._width = widths[0] if np.allclose(widths, widths[0]) else None
        self.conflicts = np.zeros(nb, dtype=np.int64)
        self.pair_exposure = np.zeros(nb, dtype=np.int64)
        self.tx_exposure = np.zeros(nb, dtype=np.int64)

    def _bin(self, d: np.ndarray) -> np.ndarray:
        if self._width is not None:
            idx = ((d - self.edges[0]) / self._width).astype(np.int64)
            return np.clip(idx, 0, len(self.conflicts) - 1)
        idx = np.searchsorted(self.edges, d, side="right") - 1
        return np.clip(idx, 0, len(self.conflicts) - 1)

    def add(self, conflict_d=(), pair_d=(), tx_d=()) -> None:
        nb = len(self.conflicts)
        for arr, d in ((self.conflicts, conflict_d), (self.pair_exposure, pair_d), (self.tx_exposure, tx_d)):
            d = np.asarray(d, dtype=float).ravel()
            if d.size:
                arr += np.bincount(self._bin(d), minlength=nb)

    def merge(self, other: "ConflictDistanceAccumulator") -> "ConflictDistanceAccumulator":
        if not np.array_equal(self.edges, other.edges):
            raise ValueError("bin edges differ")
        out = ConflictDistanceAccumulator(self.edges)
        for name in ("conflicts", "pair_exposure", "tx_exposure"):
            setattr(out, name, getattr(self, name) + getattr(other, name))
        return out

    def per_pair(self) -> np.ndarray:
        return conflict_probability_vs_distance(self.conflicts, self.pair_exposure)

    def per_transmission(self) -> np.ndarray:
        # each conflicting pair is seen from both transmitters
        return conflict_probability_vs_distance(2 * self.conflicts, self.tx_exposure)

    def probability_in(self, lo: float, hi: float, per: str = "pair") -> float:
        """Pooled probability over the bins fully inside ``[lo, hi)``."""
        sel = (self.edges[:-1] >= lo) & (self.edges[1:] <= hi)
        if per == "pair":
            num, den = self.conflicts[sel].sum(), self.pair_exposure[sel].sum()
        else:
            num, den = 2 * self.conflicts[sel].sum(), self.tx_exposure[sel].sum()
        return float(num / den) if den else math.nan

    def fraction_of_conflicts_below(self, d_m: float) -> float:
        total = self.conflicts.sum()
        if not total:
            return math.nan
        return float(self.conflicts[self.edges[1:] <= d_m].sum() / total)


def conflict_probability_vs_distance(conflict_counts, exposure_counts) -> np.ndarray:
    """Per-bin ratio of conflicts to exposure; NaN where nothing was exposed."""
    c = np.asarray(conflict_counts, dtype=float)
    e = np.asarray(exposure_counts, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(e > 0, c / np.where(e > 0, e, 1), np.nan)


def rb_occupancy_distribution(transmissions, window_start: int, grid: GridConfig) -> np.ndarray:
    """Histogram over CSR occupancy for one selection-window span.

    ``transmissions`` is a sequence of ``(ue_id, CsrId)``. Entry ``i`` of the
    result is the number of CSRs used by exactly ``i`` distinct UEs.
    """
    users: list[set] = [set() for _ in range(grid.csrs_per_window)]
    for ue, csr in transmissions:
        users[csr_linear_index(csr, window_start, grid)].add(ue)
    return np.bincount([len(u) for u in users])


def occupancy_by_window(tx_counts: np.ndarray, window: int) -> np.ndarray:
    """Per-window CSR occupancy from a ``(subframes, subchannels)`` count array.

    Returns shape ``(n_windows, window * subchannels)``; a trailing partial
    window is dropped.
    """
    n_win = tx_counts.shape[0] // window
    return tx_counts[: n_win * window].reshape(n_win, -1)


@dataclass(frozen=True)
class SummaryPoint:
    t_ms: float
    count: int
    mean: float
    median: float
    p05: float
    p95: float


def collision_distance_timeseries(times_ms, distances_m, window_ms: float, duration_ms: float,
                                  start_ms: float = 0.0) -> list[SummaryPoint]:
    """Windowed summary statistics of collision distances.

    Windows with no events are omitted (missing points).
    """
    if window_ms < 100:
        raise ValueError("window must be at least 100 ms")
    t = np.asarray(times_ms, dtype=float)
    d = np.asarray(distances_m, dtype=float)
    out = []
    n_win = int(math.ceil((duration_ms - start_ms) / window_ms))
    idx = np.floor((t - start_ms) / window_ms).astype(int) if t.size else np.zeros(0, dtype=int)
    order = np.argsort(idx, kind="stable")
    idx, d = idx[order], d[order]
    bounds = np.searchsorted(idx, np.arange(n_win + 1))
    for w in range(n_win):
        chunk = d[bounds[w]:bounds[w + 1]]
        if chunk.size == 0:
            continue
        p05, med, p95 = np.percentile(chunk, [5, 50, 95])
        out.append(SummaryPoint(start_ms + w * window_ms, int(chunk.size), float(chunk.mean()),
                                float(med), float(p05), float(p95)))
    return out


@dataclass(frozen=True)
class DccPoint:
    t_ms: float
    mean_cbp: float
    mean_rate_hz: float
    mean_power_dbm: float
    mean_itt_ms: float
    max_itt_ms: float


def dcc_timeseries(snapshots, window_ms: float) -> list[DccPoint]:
    """Fleet-averaged DCC traces.

    ``snapshots`` yields ``(t_ms, cbp[], itt_ms[], power_dbm[])`` at control
    tick cadence; snapshots falling in one window are averaged together.
    """
    groups: dict[int, list] = {}
    for t, cbp, itt, power in snapshots:
        groups.setdefault(int(t // window_ms), []).append((np.asarray(cbp), np.asarray(itt), np.asarray(power)))
    out = []
    for w in sorted(groups):
        cbp = np.concatenate([g[0].ravel() for g in groups[w]])
        itt = np.concatenate([g[1].ravel() for g in groups[w]])
        power = np.concatenate([g[2].ravel() for g in groups[w]])
        out.append(DccPoint(w * window_ms, float(cbp.mean()), float((1000.0 / itt).mean()),
                            float(power.mean()), float(itt.mean()), float(itt.max())))
    return out


@dataclass
class DelaySeries:
    ue_id: int
    tx_ms: np.ndarray
    delay_ms: np.ndarray
    itt_ms: np.ndarray       # generation gaps, NaN for the first packet
    itt_phy_ms: np.ndarray   # transmission gaps within one grant, NaN otherwise
    reselection_gap_ms: np.ndarray  # transmission gaps spanning a reselection, NaN otherwise


def mac_delay_and_itt_phy(records) -> dict[int, DelaySeries]:
    """Per-UE MAC delay, ITT and ITT_PHY from packet records.

    ``records`` holds ``(ue_id, grant_id, generation_ms, transmission_ms)``
    rows. ITT_PHY is the gap between consecutive transmissions made on the
    same semi-persistent grant; gaps across a reselection are reported
    separately because the new grant has an unrelated phase.
    """
    rec = np.asarray(records, dtype=np.int64).reshape(-1, 4)
    out = {}
    if rec.size == 0:
        return out
    order = np.lexsort((rec[:, 3], rec[:, 0]))
    rec = rec[order]
    ues, starts = np.unique(rec[:, 0], return_index=True)
    bounds = list(starts[1:]) + [len(rec)]
    for ue, lo, hi in zip(ues, starts, bounds):
        r = rec[lo:hi]
        gen, tx, grant = r[:, 2].astype(float), r[:, 3].astype(float), r[:, 1]
        itt = np.concatenate([[np.nan], np.diff(np.sort(gen))])
        gaps = np.concatenate([[np.nan], np.diff(tx)])
        same = np.concatenate([[False], grant[1:] == grant[:-1]])
        first = np.concatenate([[True], np.zeros(len(r) - 1, dtype=bool)])
        out[int(ue)] = DelaySeries(
            int(ue), tx, tx - gen, itt,
            np.where(same, gaps, np.nan),
            np.where(~same & ~first, gaps, np.nan),
        )
    return out


NOT_SETTLED = None


def settling_time(times_ms, values, band_fraction: float, hold_ms: float, reference: float | None = None):
    """Earliest time after which the series stays within ``+-band_fraction``
    of its steady-state reference for ``hold_ms`` without interruption.

    The reference defaults to the mean over the final half of the run.
    NaN points are ignored. Returns ``None`` when the series never settles.
    """
    t = np.asarray(times_ms, dtype=float)
    v = np.asarray(values, dtype=float)
    keep = ~np.isnan(v)
    t, v = t[keep], v[keep]
    if t.size == 0:
        raise ValueError("empty series")
    order = np.argsort(t, kind="stable")
    t, v = t[order], v[order]
    if t[-1] - t[0] < hold_ms:
        raise ValueError("run shorter than the hold time")
    if reference is None:
        reference = float(v[t >= t[0] + (t[-1] - t[0]) / 2].mean())
    inside = np.abs(v - reference) <= band_fraction * abs(reference)
    # index of the first point outside the band at or after each point
    next_out = np.full(len(t) + 1, len(t))
    for i in range(len(t) - 1, -1, -1):
        next_out[i] = next_out[i + 1] if inside[i] else i
    for i in range(len(t)):
        if t[i] + hold_ms > t[-1]:
            break
        if not inside[i]:
            continue
        j = next_out[i]
        if j == len(t) or t[j] > t[i] + hold_ms:
            return float(t[i])
    return NOT_SETTLED


def failure_taxonomy(outcomes) -> dict[str, int]:
    """Tally reception outcomes by cause (``decoded`` for successes)."""
    counts = Counter()
    for o in outcomes:
        cause = o.failure_cause if isinstance(o, RxOutcome) else FailureCause(o)
        counts["decoded" if cause is FailureCause.NONE else cause.value] += 1
    return {k: counts.get(k, 0) for k in ("decoded", "propagation", "collision", "half_duplex")}
