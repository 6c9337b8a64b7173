"""Parametric propagation and SINR-based reception.

Dual-slope log-distance path loss with log-normal shadowing. All functions
accept scalars or numpy arrays.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


def free_space_reference_db(carrier_mhz: float) -> float:
    """Free-space loss at 1 m, 20*log10(4*pi*f/c)."""
    return 20.0 * math.log10(4.0 * math.pi * carrier_mhz * 1e6 / SPEED_OF_LIGHT)


@dataclass(frozen=True)
class ChannelConfig:
    carrier_mhz: float = 5860.0
    # 1 m reference loss; free space at 5.9 GHz (free_space_reference_db(5900) = 47.86)
    pl0_db: float = 47.86
    n1: float = 2.0
    n2: float = 4.0
    breakpoint_m: float = 200.0
    shadow_sigma_db: float = 3.0
    noise_figure_db: float = 9.0
    sinr_threshold_db: float = 2.8
    mcs_index: int = 5

    def validate(self) -> None:
        if not (self.n2 >= self.n1 > 0):
            raise ValueError("path-loss exponents must satisfy n2 >= n1 > 0")
        if self.shadow_sigma_db < 0:
            raise ValueError("shadow_sigma_db must be >= 0")
        if self.breakpoint_m < 1:
            raise ValueError("breakpoint_m must be >= 1")
        if self.carrier_mhz <= 0:
            raise ValueError("carrier_mhz must be positive")


class FailureCause(str, enum.Enum):
    NONE = "none"
    PROPAGATION = "propagation"
    COLLISION = "collision"
    HALF_DUPLEX = "half_duplex"


@dataclass(frozen=True)
class RxOutcome:
    decoded: bool
    failure_cause: FailureCause
    sinr_db: float


def path_loss_db(d_m, cfg: ChannelConfig):
    d = np.maximum(np.asarray(d_m, dtype=float), 1.0)
    bp = cfg.breakpoint_m
    near = cfg.pl0_db + 10.0 * cfg.n1 * np.log10(d)
    far = cfg.pl0_db + 10.0 * cfg.n1 * math.log10(bp) + 10.0 * cfg.n2 * np.log10(d / bp)
    out = np.where(d <= bp, near, far)
    return float(out) if out.ndim == 0 else out


def received_power_dbm(tx_power_dbm, d_m, shadow_sample_db, cfg: ChannelConfig):
    return tx_power_dbm - path_loss_db(d_m, cfg) + shadow_sample_db


def draw_shadowing(rng: np.random.Generator, shape, cfg: ChannelConfig) -> np.ndarray:
    if cfg.shadow_sigma_db == 0:
        return np.zeros(shape)
    return cfg.shadow_sigma_db * rng.standard_normal(size=shape, dtype=np.float32)


def noise_floor_dbm(bandwidth_hz: float, cfg: ChannelConfig) -> float:
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be positive")
    return -174.0 + 10.0 * math.log10(bandwidth_hz) + cfg.noise_figure_db


def dbm_to_mw(p_dbm):
    return np.power(10.0, np.asarray(p_dbm, dtype=float) / 10.0)


def mw_to_dbm(p_mw):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(p_mw)


def sinr_matrix(rx_power_dbm: np.ndarray, subchannels: np.ndarray, noise_dbm: float, n_subchannels: int):
    """SINR (dB) and SNR (dB) of each transmission at each receiver.

    ``rx_power_dbm`` has shape (n_tx, n_rx); interference is the sum of all
    other transmissions on the same subchannel. Also returns the aggregate
    received power per (receiver, subchannel) in mW, noise excluded.
    """
    p = dbm_to_mw(rx_power_dbm)
    noise = 10.0 ** (noise_dbm / 10.0)
    n_rx = p.shape[1]
    total = np.zeros((n_rx, n_subchannels))
    for k in range(n_subchannels):
        on_k = subchannels == k
        if on_k.any():
            total[:, k] = p[on_k].sum(axis=0)
    interference = total[:, subchannels].T - p
    np.maximum(interference, 0.0, out=interference)
    sinr = mw_to_dbm(p / (noise + interference))
    snr = mw_to_dbm(p / noise)
    return sinr, snr, total


def classify(sinr_db, snr_db, receiver_transmitting, threshold_db: float) -> np.ndarray:
    """Vectorised failure cause codes: 0 none, 1 propagation, 2 collision, 3 half-duplex."""
    sinr_db = np.asarray(sinr_db)
    snr_db = np.asarray(snr_db)
    codes = np.where(sinr_db >= threshold_db, 0, np.where(snr_db >= threshold_db, 2, 1))
    return np.where(receiver_transmitting, 3, codes)


CAUSE_CODES = (FailureCause.NONE, FailureCause.PROPAGATION, FailureCause.COLLISION, FailureCause.HALF_DUPLEX)


def receive(
    transmissions,
    receiver_id,
    receiver_transmitting: bool,
    cfg: ChannelConfig,
    noise_dbm: float,
) -> dict:
    """Outcome of every transmission in one subframe at one receiver.

    ``transmissions`` is a sequence of ``(tx_id, csr, rx_power_dbm)``; only
    transmissions sharing a CSR interfere with each other.
    """
    outcomes = {}
    noise = 10.0 ** (noise_dbm / 10.0)
    by_csr: dict = {}
    for tx_id, csr, power in transmissions:
        if not math.isfinite(power):
            raise ValueError("received power must be finite")
        by_csr.setdefault(csr, []).append((tx_id, 10.0 ** (power / 10.0)))
    for group in by_csr.values():
        total = sum(p for _, p in group)
        for tx_id, p in group:
            if tx_id == receiver_id:
                continue
            sinr = 10.0 * math.log10(p / (noise + max(total - p, 0.0)))
            if receiver_transmitting:
                outcomes[tx_id] = RxOutcome(False, FailureCause.HALF_DUPLEX, sinr)
            elif sinr >= cfg.sinr_threshold_db:
                outcomes[tx_id] = RxOutcome(True, FailureCause.NONE, sinr)
            elif 10.0 * math.log10(p / noise) >= cfg.sinr_threshold_db:
                outcomes[tx_id] = RxOutcome(False, FailureCause.COLLISION, sinr)
            else:
                outcomes[tx_id] = RxOutcome(False, FailureCause.PROPAGATION, sinr)
    return outcomes
