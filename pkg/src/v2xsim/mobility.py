"""Highway scenarios on a ring road and vehicle kinematics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

ROAD_LENGTH_M = 3600.0
LANES = 12


@dataclass(frozen=True)
class Scenario:
    name: str
    vehicle_count: int
    density_per_km_lane: float
    speed_kmh: float
    road_length_m: float = ROAD_LENGTH_M
    lanes: int = LANES
    lane_width_m: float = 3.5
    speed_jitter_sigma: float = 0.0

    def validate(self) -> None:
        if self.vehicle_count < 1:
            raise ValueError("vehicle_count must be >= 1")
        if self.road_length_m <= 0 or self.lanes < 1 or self.lane_width_m < 0:
            raise ValueError("invalid road geometry")
        if self.speed_kmh < 0 or self.speed_jitter_sigma < 0:
            raise ValueError("speeds must be non-negative")

    @property
    def speed_mps(self) -> float:
        return self.speed_kmh / 3.6


SCENARIOS: dict[str, Scenario] = {
    "freeway-high": Scenario("freeway-high", 300, 7, 140),
    "freeway-low": Scenario("freeway-low", 600, 14, 70),
    "urban-medium": Scenario("urban-medium", 1200, 28, 15),
    "urban-high": Scenario("urban-high", 2400, 56, 15),
    "urban-ultra": Scenario("urban-ultra", 4800, 111, 15),
}


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None


def scaled_scenario(base: Scenario, road_length_m: float) -> Scenario:
    """Same density and speed on a shorter (or longer) ring."""
    count = round(base.vehicle_count * road_length_m / base.road_length_m)
    return replace(base, vehicle_count=count, road_length_m=road_length_m)


@dataclass
class VehicleState:
    id: int
    lane: int
    longitudinal_position_m: float
    velocity_mps: float
    speed_jitter_sigma: float = 0.0


@dataclass
class Fleet:
    """Column-oriented fleet state; row ``i`` is vehicle ``i``."""

    lane: np.ndarray
    x: np.ndarray
    v: np.ndarray
    road_length_m: float
    lane_width_m: float
    jitter_sigma: float = 0.0
    nominal_v: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.nominal_v is None:
            self.nominal_v = self.v.copy()

    def __len__(self) -> int:
        return len(self.x)

    @property
    def y(self) -> np.ndarray:
        return self.lane * self.lane_width_m

    @classmethod
    def from_vehicles(cls, vehicles, road_length_m=ROAD_LENGTH_M, lane_width_m=3.5) -> "Fleet":
        vehicles = sorted(vehicles, key=lambda s: s.id)
        if [s.id for s in vehicles] != list(range(len(vehicles))):
            raise ValueError("vehicle ids must be 0..n-1")
        sigma = max((s.speed_jitter_sigma for s in vehicles), default=0.0)
        return cls(
            lane=np.array([s.lane for s in vehicles], dtype=int),
            x=np.array([s.longitudinal_position_m for s in vehicles], dtype=float) % road_length_m,
            v=np.array([s.velocity_mps for s in vehicles], dtype=float),
            road_length_m=road_length_m,
            lane_width_m=lane_width_m,
            jitter_sigma=sigma,
        )

    def vehicles(self) -> list[VehicleState]:
        return [
            VehicleState(i, int(self.lane[i]), float(self.x[i]), float(self.v[i]), self.jitter_sigma)
            for i in range(len(self))
        ]

    def copy(self) -> "Fleet":
        return Fleet(self.lane.copy(), self.x.copy(), self.v.copy(), self.road_length_m,
                     self.lane_width_m, self.jitter_sigma, self.nominal_v.copy())


def build_scenario(name_or_scenario, seed: int) -> Fleet:
    """Place the scenario's vehicles uniformly at random, evenly split over lanes.

    Lanes ``0 .. lanes/2-1`` drive in +x, the rest in -x.
    """
    sc = name_or_scenario if isinstance(name_or_scenario, Scenario) else get_scenario(name_or_scenario)
    sc.validate()
    rng = np.random.default_rng([seed, 0x40B1])
    lane = np.arange(sc.vehicle_count) % sc.lanes
    x = rng.uniform(0.0, sc.road_length_m, size=sc.vehicle_count)
    direction = np.where(lane < sc.lanes // 2, 1.0, -1.0) if sc.lanes > 1 else np.ones(sc.vehicle_count)
    v = direction * sc.speed_mps
    return Fleet(lane, x, v, sc.road_length_m, sc.lane_width_m, sc.speed_jitter_sigma)


def step(fleet: Fleet, dt_ms: float, rng: np.random.Generator | None = None) -> Fleet:
    """Advance every vehicle by ``dt_ms`` (in place) and return the fleet.

    With a nonzero jitter sigma the velocity used for this step is the
    nominal one plus a Gaussian speed perturbation along the direction of travel.
    """
    if dt_ms <= 0:
        raise ValueError("dt_ms must be positive")
    if fleet.jitter_sigma > 0:
        if rng is None:
            raise ValueError("speed jitter requires an rng")
        direction = np.sign(fleet.nominal_v)
        fleet.v = fleet.nominal_v + direction * rng.normal(0.0, fleet.jitter_sigma, size=len(fleet))
    fleet.x = (fleet.x + fleet.v * dt_ms / 1000.0) % fleet.road_length_m
    return fleet


def ring_delta(a, b, length: float):
    """Shortest longitudinal separation on a ring of circumference ``length``."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % length
    return np.minimum(d, length - d)


def pair_distance(a: VehicleState, b: VehicleState, road_length_m: float = ROAD_LENGTH_M,
                  lane_width_m: float = 3.5) -> float:
    dx = float(ring_delta(a.longitudinal_position_m, b.longitudinal_position_m, road_length_m))
    dy = (a.lane - b.lane) * lane_width_m
    return math.hypot(dx, dy)


def distance_matrix(fleet: Fleet, rows: np.ndarray, cols: np.ndarray | None = None) -> np.ndarray:
    """Distances from vehicles ``rows`` to ``cols`` (default: every vehicle)."""
    x, y = fleet.x, fleet.y
    if cols is None:
        dx = ring_delta(x[rows][:, None], x[None, :], fleet.road_length_m)
        dy = y[rows][:, None] - y[None, :]
    else:
        dx = ring_delta(x[rows][:, None], x[cols][None, :], fleet.road_length_m)
        dy = y[rows][:, None] - y[cols][None, :]
    return np.hypot(dx, dy)
