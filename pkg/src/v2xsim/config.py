"""Scenario configuration: a line-oriented ``key = value`` format with
``[section]`` headers, one section per component.

    [dcc]
    itt_max_ms = 600
    # comments start with '#' or ';'

A dotted key (``dcc.itt_max_ms = 600``) outside any section is accepted too.
Absent keys take their defaults; unknown keys, bad values and violated
invariants raise :class:`ConfigError` naming the key and line.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, fields, replace

from .channel import ChannelConfig
from .dcc import DccConfig
from .engine import SimConfig
from .grid import GridConfig
from .mobility import SCENARIOS, Scenario
from .sps import SpsConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    """Preset name plus optional overrides; ``name = custom`` requires
    ``vehicle_count``, ``density_per_km_lane`` and ``speed_kmh``."""

    name: str = "freeway-high"
    vehicle_count: int | None = None
    density_per_km_lane: float | None = None
    speed_kmh: float | None = None
    road_length_m: float | None = None
    lanes: int | None = None
    lane_width_m: float | None = None
    speed_jitter_sigma: float | None = None

    def validate(self) -> None:
        self.build()

    def build(self) -> Scenario:
        overrides = {f.name: getattr(self, f.name) for f in fields(self)
                     if f.name != "name" and getattr(self, f.name) is not None}
        if self.name == "custom":
            missing = [k for k in ("vehicle_count", "density_per_km_lane", "speed_kmh") if k not in overrides]
            if missing:
                raise ValueError(f"custom scenario needs {', '.join(missing)}")
            sc = Scenario("custom", **overrides)
        elif self.name in SCENARIOS:
            base = SCENARIOS[self.name]
            if "road_length_m" in overrides and "vehicle_count" not in overrides:
                overrides["vehicle_count"] = round(base.vehicle_count * overrides["road_length_m"] / base.road_length_m)
            sc = replace(base, **overrides)
        else:
            raise ValueError(f"unknown scenario name {self.name!r}")
        sc.validate()
        return sc


@dataclass(frozen=True)
class Configs:
    grid: GridConfig = field(default_factory=GridConfig)
    sps: SpsConfig = field(default_factory=SpsConfig)
    dcc: DccConfig = field(default_factory=DccConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def validate(self) -> None:
        for name in SECTIONS:
            try:
                getattr(self, name).validate()
            except ValueError as e:
                raise ConfigError(f"[{name}] {e}") from None
        if self.sim.mobility_tick_ms != self.dcc.control_tick_ms:
            raise ConfigError("[sim] mobility_tick_ms must equal dcc.control_tick_ms")


SECTIONS = ("grid", "sps", "dcc", "channel", "scenario", "sim")


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def _parse_value(raw: str, tp):
    raw = raw.strip()
    args = typing.get_args(tp)
    if type(None) in args:
        if raw.lower() in ("none", ""):
            return None
        tp = next(a for a in args if a is not type(None))
    if tp is bool:
        low = raw.lower()
        if low in ("true", "on", "yes", "1"):
            return True
        if low in ("false", "off", "no", "0"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if tp is int:
        try:
            return int(raw)
        except ValueError:
            f = float(raw)
            if not f.is_integer():
                raise ValueError(f"expected an integer, got {raw!r}") from None
            return int(f)
    if tp is float:
        return float(raw)
    if tp is str:
        return raw.strip('"').strip("'")
    raise TypeError(f"unsupported field type {tp}")


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def parse_config(text: str, base: Configs | None = None) -> Configs:
    base = base or Configs()
    values: dict[str, dict] = {s: {} for s in SECTIONS}
    lines: dict[tuple[str, str], int] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header")
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (p.strip() for p in line.split("=", 1))
        sec = section
        if "." in key:
            sec, key = key.split(".", 1)
        if sec is None:
            raise ConfigError(f"line {lineno}: key {key!r} outside any section")
        if sec not in SECTIONS:
            raise ConfigError(f"line {lineno}: unknown section {sec!r}")
        hints = _hints(type(getattr(base, sec)))
        if key not in hints:
            raise ConfigError(f"line {lineno}: unknown key {sec}.{key}")
        try:
            values[sec][key] = _parse_value(raw, hints[key])
        except (ValueError, TypeError) as e:
            raise ConfigError(f"line {lineno}: {sec}.{key}: {e}") from None
        lines[(sec, key)] = lineno
    built = {s: replace(getattr(base, s), **values[s]) for s in SECTIONS}
    cfg = Configs(**built)
    try:
        cfg.validate()
    except ConfigError as e:
        msg = str(e)
        at = [f"line {n}" for (s, k), n in sorted(lines.items(), key=lambda kv: kv[1])
              if f"[{s}]" in msg and k in msg]
        raise ConfigError(f"{msg} ({', '.join(at)})" if at else msg) from None
    return cfg


def apply_overrides(cfg: Configs, assignments) -> Configs:
    """Apply ``section.key=value`` strings on top of ``cfg``."""
    text = "\n".join(a.replace("=", " = ", 1) for a in assignments)
    return parse_config(text, base=cfg)


def serialize_config(cfg: Configs) -> str:
    out = []
    for s in SECTIONS:
        obj = getattr(cfg, s)
        out.append(f"[{s}]")
        for f in fields(obj):
            out.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
        out.append("")
    return "\n".join(out)


def config_dict(cfg: Configs) -> dict:
    return {s: dataclasses.asdict(getattr(cfg, s)) for s in SECTIONS}
