"""Sidelink resource addressing: subframes, subchannels and CSR indices."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class GridConfig:
    bandwidth_mhz: float = 10.0
    rbs_per_subframe: int = 50
    subchannels_per_subframe: int = 2
    rbs_per_subchannel: int = 25
    subframe_duration_ms: int = 1
    selection_window_subframes: int = 100
    # T1: first candidate subframe relative to packet generation.
    selection_offset_subframes: int = 0
    reservation_period_ms: int = 100

    def validate(self) -> None:
        if self.rbs_per_subchannel * self.subchannels_per_subframe > self.rbs_per_subframe:
            raise ValueError("rbs_per_subchannel * subchannels_per_subframe exceeds rbs_per_subframe")
        if self.subframe_duration_ms != 1:
            raise ValueError("subframe_duration_ms must be 1")
        if self.subchannels_per_subframe < 1 or self.selection_window_subframes < 1:
            raise ValueError("grid dimensions must be positive")
        if self.reservation_period_ms <= 0:
            raise ValueError("reservation_period_ms must be positive")
        if self.selection_offset_subframes < 0:
            raise ValueError("selection_offset_subframes must be >= 0")

    @property
    def csrs_per_window(self) -> int:
        return self.selection_window_subframes * self.subchannels_per_subframe

    @property
    def subchannel_bandwidth_hz(self) -> float:
        # 180 kHz per LTE resource block
        return self.rbs_per_subchannel * 180e3


@dataclass(frozen=True, order=True)
class CsrId:
    subframe: int
    subchannel: int


def csr_linear_index(csr: CsrId, window_start: int, cfg: GridConfig) -> int:
    """Row-major index of ``csr`` inside the selection window starting at ``window_start``."""
    offset = csr.subframe - window_start
    if not 0 <= offset < cfg.selection_window_subframes:
        raise IndexError(f"subframe {csr.subframe} outside window starting at {window_start}")
    if not 0 <= csr.subchannel < cfg.subchannels_per_subframe:
        raise IndexError(f"subchannel {csr.subchannel} out of range")
    return offset * cfg.subchannels_per_subframe + csr.subchannel


def csr_from_linear_index(index: int, window_start: int, cfg: GridConfig) -> CsrId:
    if not 0 <= index < cfg.csrs_per_window:
        raise IndexError(f"linear index {index} out of range")
    offset, subchannel = divmod(index, cfg.subchannels_per_subframe)
    return CsrId(window_start + offset, subchannel)


def window_csrs(window_start: int, cfg: GridConfig) -> list[CsrId]:
    """All CSRs of a selection window, in linear-index order."""
    return [csr_from_linear_index(i, window_start, cfg) for i in range(cfg.csrs_per_window)]


def period_aligned_subframes(
    candidate_subframe: int,
    sensing_span_ms: int = 1000,
    period_ms: int = 100,
    window_end: int | None = None,
) -> list[int]:
    """Subframes congruent to ``candidate_subframe`` modulo the period.

    The window is ``[window_end - sensing_span_ms, window_end)``; ``window_end``
    defaults to the candidate itself.
    """
    if period_ms <= 0:
        raise ValueError("period_ms must be positive")
    end = candidate_subframe if window_end is None else window_end
    start = end - sensing_span_ms
    first = start + (candidate_subframe - start) % period_ms
    return list(range(first, end, period_ms))
