"""Static SVG figures rendered from a run directory's CSVs.

Rendering reads only the emitted CSV files, never simulator state, and the
SVG output is byte-stable (fixed hash salt, no timestamp).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .outputs import read_csv  # noqa: E402

FIGURES = ("fig1", "fig3", "fig4", "fig5", "fig6", "fig7")

_SOURCES = {
    "fig1": "fig1_conflict_probability.csv",
    "fig3": "fig3_rb_occupancy.csv",
    "fig4": "fig4_collision_distance.csv",
    "fig5": "fig5_occupancy_timeseries.csv",
    "fig6": "fig6_dcc.csv",
    "fig7": "fig7_mac_delay.csv",
}


def _fig1(d, ax):
    mid = (d["bin_lo_m"] + d["bin_hi_m"]) / 2
    ax.plot(mid, d["p_per_pair"], marker="o", ms=3, label="per pair")
    ax2 = ax.twinx()
    ax2.plot(mid, d["p_per_transmission"], color="tab:orange", marker="s", ms=3, label="per transmission")
    ax.set_xlabel("distance between UEs [m]")
    ax.set_ylabel("conflict probability (per pair)")
    ax2.set_ylabel("conflict probability (per transmission)")
    ax.legend(loc="upper left")
    ax2.legend(loc="upper right")


def _fig3(d, ax):
    ax.bar(d["occupancy"], d["fraction"], width=0.8)
    ax.set_xlabel("UEs occupying one CSR in a 100 ms window")
    ax.set_ylabel("fraction of CSRs")


def _fig4(d, ax):
    t = d["t_ms"] / 1000
    ax.fill_between(t, d["p05_m"], d["p95_m"], alpha=0.25, label="5th-95th percentile")
    ax.plot(t, d["mean_m"], label="mean")
    ax.plot(t, d["median_m"], linestyle="--", label="median")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("distance between conflicting UEs [m]")
    ax.legend()


def _fig5(d, ax):
    t = d["t_ms"] / 1000
    ax.plot(t, d["mean"], label="mean")
    ax.plot(t, d["p99"], label="99th percentile")
    ax.plot(t, d["max"], label="max")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("UEs per CSR")
    ax.legend()


def _fig6(d, axes):
    t = d["t_ms"] / 1000
    a, b, c = axes
    a.plot(t, d["mean_cbp"])
    a.set_ylabel("CBP")
    b.plot(t, d["mean_rate_hz"])
    b.set_ylabel("rate [Hz]")
    c.plot(t, d["mean_power_dbm"])
    c.set_ylabel("power [dBm]")
    c.set_xlabel("time [s]")


def _fig7(d, ax, ue=None):
    if d["ue_id"].size == 0:
        ax.set_title("no packets")
        return
    if ue is None:
        ue = int(d["ue_id"][0])
    sel = d["ue_id"] == ue
    t = d["transmission_ms"][sel] / 1000
    ax.plot(t, d["delay_ms"][sel], marker=".", linestyle="none", label="MAC delay")
    ax.step(t, d["itt_ms"][sel], where="post", label="ITT")
    ax.plot(t, d["itt_phy_ms"][sel], marker="x", linestyle="none", label="ITT_PHY")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("ms")
    ax.set_title(f"UE {ue}")
    ax.legend()


def render(run_dir, figure: str, out_path=None, ue: int | None = None) -> Path:
    """Render one figure from ``run_dir`` and return the SVG path."""
    if figure not in FIGURES:
        raise ValueError(f"unknown figure {figure!r}; choose from {', '.join(FIGURES)}")
    run_dir = Path(run_dir)
    src = run_dir / _SOURCES[figure]
    if not src.is_file():
        raise FileNotFoundError(f"{src} not found")
    d = read_csv(src)
    out_path = Path(out_path) if out_path else run_dir / f"{figure}.svg"
    with plt.rc_context({"svg.hashsalt": "v2xsim", "svg.fonttype": "path"}):
        if figure == "fig6":
            fig, axes = plt.subplots(3, 1, sharex=True, figsize=(7, 7))
            _fig6(d, axes)
        else:
            fig, ax = plt.subplots(figsize=(7, 4.5))
            if figure == "fig7":
                _fig7(d, ax, ue)
            else:
                {"fig1": _fig1, "fig3": _fig3, "fig4": _fig4, "fig5": _fig5}[figure](d, ax)
        fig.tight_layout()
        tmp = out_path.with_suffix(".svg.tmp")
        try:
            fig.savefig(tmp, format="svg", metadata={"Date": None})
            tmp.replace(out_path)
        finally:
            plt.close(fig)
            tmp.unlink(missing_ok=True)
    return out_path
