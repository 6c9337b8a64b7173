"""Run artifacts: one CSV per figure analog, a JSON summary and a manifest.

Column schemas (stable):

packets.csv                 ue_id, grant_id, generation_ms, transmission_ms, subchannel, tx_power_dbm
collisions.csv              time_ms, subchannel, ue_a, ue_b, distance_m
fig1_conflict_probability   bin_lo_m, bin_hi_m, conflicts, pair_exposure, p_per_pair,
                            tx_exposure, p_per_transmission
fig3_rb_occupancy           occupancy, csr_count, fraction
fig4_collision_distance     t_ms, events, mean_m, median_m, p05_m, p95_m
fig5_occupancy_timeseries   t_ms, mean, p99, max, unused, over4
fig6_dcc                    t_ms, mean_cbp, mean_rate_hz, mean_power_dbm, mean_itt_ms, max_itt_ms, mean_density
fig7_mac_delay              ue_id, transmission_ms, delay_ms, itt_ms, itt_phy_ms, reselection_gap_ms

Missing values (empty-exposure bins, first packet of a series) are empty cells.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import io
import json
import math
import shutil
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .config import Configs, config_dict, serialize_config
from .engine import SimResult
from .metrics import (collision_distance_timeseries, mac_delay_and_itt_phy, occupancy_by_window,
                      settling_time)

FIG4_WINDOW_MS = 500
SETTLING_BAND = 0.10
SETTLING_HOLD_MS = 2000
OCCUPANCY_WINDOW_MS = 100

ESTIMATORS = {
    "p_per_pair": "same-CSR pairs / pairs of UEs transmitting in the same subframe, per distance bin",
    "p_per_transmission": "same-CSR pairs x2 / (transmission, other UE) pairs at that distance, per distance bin",
    "distance": "ring-road distance including lane offset",
    "rb_occupancy": "distinct transmitters per CSR per 100 ms window",
    "settling": f"windowed mean conflict distance, window {FIG4_WINDOW_MS} ms, band "
                f"{SETTLING_BAND:.0%}, hold {SETTLING_HOLD_MS} ms, reference = mean of the final half",
}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    f = float(v)
    if math.isnan(f):
        return ""
    if f.is_integer() and abs(f) < 1e15:
        return str(int(f))
    return format(f, ".10g")


def _csv_text(header, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    n = len(columns[0]) if columns else 0
    cols = [np.asarray(c).tolist() for c in columns]
    for i in range(n):
        w.writerow([_fmt(c[i]) for c in cols])
    return buf.getvalue()


def _nan_to_none(x):
    if isinstance(x, float) and math.isnan(x):
        return None
    return x


# -- tables -----------------------------------------------------------------------------

def occupancy_windows(result: SimResult, window_ms: int = OCCUPANCY_WINDOW_MS,
                      start_ms: int = 0) -> np.ndarray:
    """(windows, CSRs) distinct-transmitter counts for full windows after ``start_ms``."""
    return occupancy_by_window(result.tx_counts[start_ms:], window_ms)


def fig1_table(result: SimResult):
    h = result.conflict_hist
    e = h.edges
    return (["bin_lo_m", "bin_hi_m", "conflicts", "pair_exposure", "p_per_pair",
             "tx_exposure", "p_per_transmission"],
            [e[:-1], e[1:], h.conflicts, h.pair_exposure, h.per_pair(), h.tx_exposure,
             h.per_transmission()])


def fig3_table(result: SimResult, start_ms: int = 0):
    occ = occupancy_windows(result, start_ms=start_ms)
    counts = np.bincount(occ.ravel(), minlength=1) if occ.size else np.zeros(1, dtype=np.int64)
    total = counts.sum()
    frac = counts / total if total else np.full(counts.shape, np.nan)
    return ["occupancy", "csr_count", "fraction"], [np.arange(len(counts)), counts, frac]


def fig4_points(result: SimResult, window_ms: int = FIG4_WINDOW_MS):
    c = result.collisions
    return collision_distance_timeseries(c["time_ms"], c["distance_m"], window_ms, result.duration_ms)


def fig4_table(result: SimResult, window_ms: int = FIG4_WINDOW_MS):
    pts = fig4_points(result, window_ms)
    return (["t_ms", "events", "mean_m", "median_m", "p05_m", "p95_m"],
            [[p.t_ms for p in pts], [p.count for p in pts], [p.mean for p in pts],
             [p.median for p in pts], [p.p05 for p in pts], [p.p95 for p in pts]])


def fig5_table(result: SimResult):
    occ = occupancy_windows(result)
    t = np.arange(occ.shape[0]) * OCCUPANCY_WINDOW_MS
    if occ.size == 0:
        z = np.zeros(0)
        return ["t_ms", "mean", "p99", "max", "unused", "over4"], [z] * 6
    return (["t_ms", "mean", "p99", "max", "unused", "over4"],
            [t, occ.mean(axis=1), np.percentile(occ, 99, axis=1), occ.max(axis=1),
             (occ == 0).sum(axis=1), (occ > 4).sum(axis=1)])


def fig6_table(result: SimResult):
    keys = ["t_ms", "mean_cbp", "mean_rate_hz", "mean_power_dbm", "mean_itt_ms", "max_itt_ms", "mean_density"]
    return keys, [result.dcc_trace[k] for k in keys]


def delay_series(result: SimResult):
    p = result.packets
    rec = np.column_stack([p["ue_id"], p["grant_id"], p["generation_ms"], p["transmission_ms"]]) \
        if len(p["ue_id"]) else np.zeros((0, 4), dtype=np.int64)
    return mac_delay_and_itt_phy(rec)


def fig7_table(result: SimResult):
    series = delay_series(result)
    cols = {k: [] for k in ("ue_id", "transmission_ms", "delay_ms", "itt_ms", "itt_phy_ms", "reselection_gap_ms")}
    for ue in sorted(series):
        s = series[ue]
        cols["ue_id"].append(np.full(len(s.tx_ms), ue))
        cols["transmission_ms"].append(s.tx_ms)
        cols["delay_ms"].append(s.delay_ms)
        cols["itt_ms"].append(s.itt_ms)
        cols["itt_phy_ms"].append(s.itt_phy_ms)
        cols["reselection_gap_ms"].append(s.reselection_gap_ms)
    return list(cols), [np.concatenate(v) if v else np.zeros(0) for v in cols.values()]


def packets_table(result: SimResult):
    keys = ["ue_id", "grant_id", "generation_ms", "transmission_ms", "subchannel", "tx_power_dbm"]
    return keys, [result.packets[k] for k in keys]


def collisions_table(result: SimResult):
    keys = ["time_ms", "subchannel", "ue_a", "ue_b", "distance_m"]
    return keys, [result.collisions[k] for k in keys]


TABLES = {
    "packets.csv": packets_table,
    "collisions.csv": collisions_table,
    "fig1_conflict_probability.csv": fig1_table,
    "fig3_rb_occupancy.csv": fig3_table,
    "fig4_collision_distance.csv": fig4_table,
    "fig5_occupancy_timeseries.csv": fig5_table,
    "fig6_dcc.csv": fig6_table,
    "fig7_mac_delay.csv": fig7_table,
}


# -- summary ----------------------------------------------------------------------------

def conflict_distance_settling(result: SimResult, window_ms: int = FIG4_WINDOW_MS,
                               band: float = SETTLING_BAND, hold_ms: float = SETTLING_HOLD_MS):
    pts = fig4_points(result, window_ms)
    if len(pts) < 2:
        return None
    t = [p.t_ms for p in pts]
    if t[-1] - t[0] < hold_ms:
        return None
    return settling_time(t, [p.mean for p in pts], band, hold_ms)


def summarize(result: SimResult, cfg: Configs) -> dict:
    h = result.conflict_hist
    occ = occupancy_windows(result)
    tx = len(result.packets["ue_id"])
    series = delay_series(result)
    itt_phy = np.concatenate([s.itt_phy_ms for s in series.values()]) if series else np.zeros(0)
    itt_phy = itt_phy[~np.isnan(itt_phy)]
    delay = np.concatenate([s.delay_ms for s in series.values()]) if series else np.zeros(0)
    trace = result.dcc_trace
    settle = conflict_distance_settling(result)
    steady = {}
    if len(trace["t_ms"]):
        late = trace["t_ms"] >= trace["t_ms"][-1] / 2
        steady = {k: float(np.mean(trace[k][late])) for k in
                  ("mean_cbp", "mean_rate_hz", "mean_power_dbm", "mean_itt_ms", "mean_density")}
        steady["max_itt_ms"] = float(np.max(trace["max_itt_ms"]))
    return {
        "scenario": cfg.scenario.build().name,
        "n_ue": result.n_ue,
        "seed": cfg.sim.seed,
        "dcc_enabled": result.dcc_enabled,
        "duration_ms": result.duration_ms,
        "packets": {
            "generated": result.generated,
            "transmitted": tx,
            "replaced": result.replaced,
            "pending_at_end": result.pending_at_end,
            "conserved": result.generated == tx + result.replaced + result.pending_at_end,
        },
        "reception": result.taxonomy,
        "conflicts": {
            "events": int(h.conflicts.sum()),
            "p_per_pair_below_100m": _nan_to_none(h.probability_in(0, 100, "pair")),
            "p_per_pair_1000_2000m": _nan_to_none(h.probability_in(1000, 2000, "pair")),
            "p_per_transmission_below_100m": _nan_to_none(h.probability_in(0, 100, "tx")),
            "fraction_below_500m": _nan_to_none(h.fraction_of_conflicts_below(500)),
            "distance_settling_ms": settle,
        },
        "occupancy": {
            "windows": int(occ.shape[0]),
            "p99": float(np.percentile(occ, 99)) if occ.size else None,
            "max": int(occ.max()) if occ.size else None,
            "windows_with_over4_and_unused": int(((occ > 4).any(axis=1) & (occ == 0).any(axis=1)).sum())
            if occ.size else 0,
        },
        "mac": {
            "delay_min_ms": float(delay.min()) if delay.size else None,
            "delay_max_ms": float(delay.max()) if delay.size else None,
            "itt_phy_values_ms": sorted({int(v) for v in np.unique(itt_phy)}),
        },
        "dcc_steady_state": steady,
        "estimators": ESTIMATORS,
    }


# -- writing ----------------------------------------------------------------------------

def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _clear_previous_run(out: Path) -> None:
    if not out.exists():
        return
    if out.is_dir() and not any(out.iterdir()):
        out.rmdir()
        return
    if out.is_dir() and (out / "manifest.json").is_file():
        shutil.rmtree(out)
        return
    raise FileExistsError(f"{out} exists and is not a previous run directory")


def write_run(result: SimResult, cfg: Configs, out_dir, started: dt.datetime | None = None,
              finished: dt.datetime | None = None) -> dict:
    """Write every artifact into ``out_dir`` atomically and return the manifest.

    Files are staged in a sibling temporary directory and moved into place
    only once all of them are written, so a failure leaves nothing behind.
    """
    out = Path(out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    now = dt.datetime.now(dt.timezone.utc)
    stage = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        for name, table in TABLES.items():
            header, cols = table(result)
            (stage / name).write_text(_csv_text(header, cols))
        summary = summarize(result, cfg)
        (stage / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        (stage / "config.ini").write_text(serialize_config(cfg))
        files = sorted(p.name for p in stage.iterdir())
        manifest = {
            "tool": "v2xsim",
            "version": __version__,
            "seed": cfg.sim.seed,
            "config": config_dict(cfg),
            "started_utc": (started or now).isoformat(),
            "finished_utc": (finished or now).isoformat(),
            "files": {f: {"sha256": sha256_file(stage / f), "bytes": (stage / f).stat().st_size}
                      for f in files},
        }
        (stage / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        _clear_previous_run(out)
        stage.rename(out)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    return manifest


def read_csv(path) -> dict[str, np.ndarray]:
    """Load one of the emitted CSVs into float columns (empty cells become NaN)."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    cols = {}
    for i, name in enumerate(header):
        cols[name] = np.array([float(r[i]) if r[i] != "" else np.nan for r in body], dtype=float)
    return cols
