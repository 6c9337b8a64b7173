"""Distributed congestion control: density-based rate control, position
tracking error override and CBP-driven transmit power (range) control.

Scalar functions operate on one UE; :class:`DccBank` applies the same laws
to a whole fleet with numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class DccConfig:
    itt_min_ms: float = 100.0
    itt_max_ms: float = 600.0
    density_coeff: float = 25.0
    density_radius_m: float = 100.0
    heard_within_ms: float = 1000.0
    smoothing_lambda: float = 0.05
    pte_threshold_m: float = 0.5
    p_min_dbm: float = 10.0
    p_max_dbm: float = 23.0
    cbp_min: float = 0.50
    cbp_max: float = 0.80
    cbp_busy_threshold_dbm: float = -94.0
    cbp_window_ms: int = 100
    # weight of the newest CBP measurement in the smoothed value
    cbp_smoothing: float = 0.5
    control_tick_ms: int = 100
    # when set, replaces the density-driven ITT (diagnostics / tests)
    fixed_itt_ms: float | None = None

    def validate(self) -> None:
        if not self.itt_min_ms <= self.itt_max_ms:
            raise ValueError("itt_min_ms must be <= itt_max_ms")
        if self.itt_min_ms <= 0:
            raise ValueError("itt_min_ms must be positive")
        if not self.p_min_dbm <= self.p_max_dbm:
            raise ValueError("p_min_dbm must be <= p_max_dbm")
        if not 0 <= self.cbp_min < self.cbp_max <= 1:
            raise ValueError("need 0 <= cbp_min < cbp_max <= 1")
        if not 0 < self.smoothing_lambda <= 1 or not 0 < self.cbp_smoothing <= 1:
            raise ValueError("smoothing factors must lie in (0, 1]")
        if self.density_coeff <= 0 or self.density_radius_m < 0:
            raise ValueError("density parameters must be positive")
        if self.cbp_window_ms < 1 or self.control_tick_ms < 1:
            raise ValueError("windows must be >= 1 ms")
        if self.fixed_itt_ms is not None and self.fixed_itt_ms <= 0:
            raise ValueError("fixed_itt_ms must be positive")


@dataclass
class TxSnapshot:
    position: tuple[float, float]
    velocity: tuple[float, float]
    timestamp_ms: float


@dataclass
class DccState:
    smoothed_density: float = 0.0
    current_itt_ms: float = 100.0
    cbp: float = 0.0
    tx_power_dbm: float = 23.0
    last_tx_snapshot: TxSnapshot | None = None


def instantaneous_density(neighbors, now_ms: float, cfg: DccConfig) -> int:
    count = 0
    for distance_m, last_heard_ms in neighbors:
        if distance_m < 0:
            raise ValueError("distances must be non-negative")
        if distance_m <= cfg.density_radius_m and now_ms - last_heard_ms <= cfg.heard_within_ms:
            count += 1
    return count


def ewma(prior: float, sample: float, lam: float) -> float:
    return (1.0 - lam) * prior + lam * sample


def estimate_density(neighbors, now_ms: float, cfg: DccConfig, prior: float = 0.0) -> float:
    """One control-tick update of the smoothed vehicle density.

    ``neighbors`` holds ``(distance_m, last_heard_ms)`` pairs.
    """
    return ewma(prior, instantaneous_density(neighbors, now_ms, cfg), cfg.smoothing_lambda)


def compute_itt(smoothed_density, cfg: DccConfig):
    if cfg.fixed_itt_ms is not None:
        return np.full_like(np.asarray(smoothed_density, dtype=float), cfg.fixed_itt_ms)[()]
    itt = cfg.itt_min_ms * np.asarray(smoothed_density, dtype=float) / cfg.density_coeff
    return np.clip(itt, cfg.itt_min_ms, cfg.itt_max_ms)[()]


def update_pte(state: DccState, true_position, true_velocity, now_ms: float, cfg: DccConfig):
    """Position tracking error against dead reckoning from the last sent BSM.

    Returns ``(pte_m, force_tx)``. ``true_velocity`` is unused by the
    estimate itself; it is what the next snapshot will carry.
    """
    snap = state.last_tx_snapshot
    if snap is None:
        return math.inf, True
    dt = (now_ms - snap.timestamp_ms) / 1000.0
    px = snap.position[0] + snap.velocity[0] * dt
    py = snap.position[1] + snap.velocity[1] * dt
    pte = math.hypot(true_position[0] - px, true_position[1] - py)
    return pte, pte > cfg.pte_threshold_m


def update_cbp(busy_subframes: int, total_monitored: int, previous: float = 0.0) -> float:
    if total_monitored <= 0:
        return previous
    if not 0 <= busy_subframes <= total_monitored:
        raise ValueError("busy_subframes must lie in [0, total_monitored]")
    return busy_subframes / total_monitored


def compute_tx_power(cbp, cfg: DccConfig):
    """Piecewise-linear CBP to power map: p_max below cbp_min, p_min above cbp_max."""
    frac = (np.asarray(cbp, dtype=float) - cfg.cbp_min) / (cfg.cbp_max - cfg.cbp_min)
    frac = np.clip(frac, 0.0, 1.0)
    return (cfg.p_max_dbm - frac * (cfg.p_max_dbm - cfg.p_min_dbm))[()]


def next_generation_time(last_gen_ms: float, itt_ms: float, force_tx: bool, now_ms: float | None = None) -> float:
    if force_tx:
        if now_ms is None:
            raise ValueError("forced generation needs the current time")
        return now_ms
    return last_gen_ms + itt_ms


@dataclass
class DccBank:
    """Fleet-wide DCC state as parallel arrays."""

    n: int
    cfg: DccConfig
    enabled: bool = True
    smoothed_density: np.ndarray = field(init=False)
    itt_ms: np.ndarray = field(init=False)
    cbp: np.ndarray = field(init=False)
    cbp_raw: np.ndarray = field(init=False)
    tx_power_dbm: np.ndarray = field(init=False)

    def __post_init__(self):
        self.smoothed_density = np.zeros(self.n)
        self.cbp = np.zeros(self.n)
        self.cbp_raw = np.zeros(self.n)
        self.itt_ms = np.full(self.n, self.cfg.itt_min_ms if self.enabled else 100.0)
        if self.enabled:
            self.itt_ms = np.asarray(compute_itt(self.smoothed_density, self.cfg), dtype=float).reshape(self.n)
        self.tx_power_dbm = np.full(self.n, self.cfg.p_max_dbm)

    def update(self, density_now: np.ndarray, busy: np.ndarray, monitored: np.ndarray) -> None:
        self.smoothed_density = ewma(self.smoothed_density, density_now, self.cfg.smoothing_lambda)
        ok = monitored > 0
        self.cbp_raw = np.where(ok, busy / np.maximum(monitored, 1), self.cbp_raw)
        self.cbp = np.where(ok, ewma(self.cbp, self.cbp_raw, self.cfg.cbp_smoothing), self.cbp)
        if self.enabled:
            self.itt_ms = np.asarray(compute_itt(self.smoothed_density, self.cfg), dtype=float).reshape(self.n)
            self.tx_power_dbm = np.asarray(compute_tx_power(self.cbp, self.cfg), dtype=float).reshape(self.n)
