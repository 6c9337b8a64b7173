"""Compiled per-subframe link kernel.

Fuses geometry, path loss, shadowing, interference aggregation and
SINR classification for all (transmitter, receiver) pairs of one subframe.
"""

from __future__ import annotations

import math

import numba
import numpy as np


@numba.njit(cache=True, fastmath=False)
def link_budget(tx, tx_sub, tx_pow_dbm, x, lane, road_length, lane_width, shadow,
                pl0, n1, n2, bp, noise_mw, thr_lin, n_sub, bin_width, tx_hist,
                last_heard, t, total_mw, rsrp_dbm, cause_counts, tx_dist):
    """Fill ``total_mw``/``rsrp_dbm`` (n_rx, n_sub), accumulate cause counts and
    the per-distance transmitter exposure, stamp ``last_heard`` for decoded
    pairs, and write transmitter-to-transmitter distances into ``tx_dist``."""
    n_tx = tx.shape[0]
    n = x.shape[0]
    nb = tx_hist.shape[0]
    p = np.empty((n_tx, n))
    ln10_10 = math.log(10.0) / 10.0
    bp2 = bp * bp
    # received mW = exp(base - slope * ln(d^2) + ln10/10 * shadow)
    near_base = -ln10_10 * pl0
    far_base = -ln10_10 * (pl0 + 10.0 * (n1 - n2) * math.log10(bp))
    near_slope = n1 / 2.0
    far_slope = n2 / 2.0
    half = road_length / 2.0
    for r in range(n):
        for k in range(n_sub):
            total_mw[r, k] = 0.0
            rsrp_dbm[r, k] = -np.inf
    for i in range(n_tx):
        j = tx[i]
        xj = x[j]
        lj = lane[j]
        k = tx_sub[i]
        ptx = ln10_10 * tx_pow_dbm[i]
        for r in range(n):
            if r == j:
                p[i, r] = 0.0
                continue
            dx = abs(xj - x[r])
            if dx > half:
                dx = road_length - dx
            dy = (lj - lane[r]) * lane_width
            d2 = dx * dx + dy * dy
            b = int(math.sqrt(d2) / bin_width)
            tx_hist[b if b < nb else nb - 1] += 1
            if d2 < 1.0:
                d2 = 1.0
            if d2 <= bp2:
                e = near_base - near_slope * math.log(d2)
            else:
                e = far_base - far_slope * math.log(d2)
            v = math.exp(ptx + e + ln10_10 * shadow[i, r])
            p[i, r] = v
            total_mw[r, k] += v
        for i2 in range(n_tx):
            j2 = tx[i2]
            dx = abs(xj - x[j2])
            if dx > half:
                dx = road_length - dx
            dy = (lj - lane[j2]) * lane_width
            tx_dist[i, i2] = math.sqrt(dx * dx + dy * dy)
    busy = np.zeros(n, dtype=np.bool_)
    for i in range(n_tx):
        busy[tx[i]] = True
    for i in range(n_tx):
        k = tx_sub[i]
        j = tx[i]
        for r in range(n):
            if r == j:
                continue
            if busy[r]:
                cause_counts[3] += 1
                continue
            s = p[i, r]
            interf = total_mw[r, k] - s
            if interf < 0.0:
                interf = 0.0
            if s >= thr_lin * (noise_mw + interf):
                cause_counts[0] += 1
                last_heard[r, j] = t
                v = 10.0 * math.log10(s)
                if v > rsrp_dbm[r, k]:
                    rsrp_dbm[r, k] = v
            elif s >= thr_lin * noise_mw:
                cause_counts[2] += 1
            else:
                cause_counts[1] += 1
