"""Built-in scenario construction: a synthetic four-arm urban intersection.

The default scenario mirrors the shape of a large signalized junction with
five incoming lanes from east, south and west, three from north, static
obstacles on the western and southern approaches close to the intersection,
four VRU crossings and a two-phase fixed-time signal plan whose red phase
lasts 50 s.  Demand is synthesized by seeded Poisson processes per lane, so
the generated scenario is fully deterministic and can be regenerated or
scaled (e.g. for full-scale experiments) from code.
"""

from __future__ import annotations

import random
from importlib import resources
from pathlib import Path

from .network import (
    ConflictArea,
    DemandEntry,
    LaneGeometry,
    MeasurementZone,
    Scenario,
    SignalGroup,
    SignalPlan,
    StaticObstacle,
    VruCrossing,
    VruPath,
    validate_scenario,
)

LANE_LENGTH = 540.0
STOP_LINE = 400.0

# Lane movement layout per approach, rightmost first.
_LAYOUT = {
    "W": ("right", "straight", "straight", "straight", "left"),
    "E": ("right", "straight", "straight", "straight", "left"),
    "S": ("right", "straight", "straight", "straight", "left"),
    "N": ("right", "straight", "left"),
}

# Hourly demand per lane for the desk-scale default (~1000 vehicles/h total).
# Demand is concentrated on the main straight lanes so that queue discharge,
# not free-flow cruising, dominates crossing durations.
DEFAULT_RATES = {
    "W0": 15, "W1": 40, "W2": 60, "W3": 430, "W4": 15,
    "S0": 15, "S1": 40, "S2": 60, "S3": 430, "S4": 15,
    "E1": 25, "E2": 25,
    "N1": 30,
}

DEFAULT_VRU_RATE = 15  # per path per hour; four paths give ~60 VRUs/h
DEFAULT_TRUCK_SHARE = 0.05
DEFAULT_DEMAND_SEED = 20240801


def _build_lanes() -> tuple[LaneGeometry, ...]:
    lanes = []
    for approach, movements in _LAYOUT.items():
        n = len(movements)
        for idx, movement in enumerate(movements):
            lanes.append(
                LaneGeometry(
                    id=f"{approach}{idx}",
                    approach=approach,
                    index=idx,
                    length=LANE_LENGTH,
                    stop_line_pos=STOP_LINE,
                    movements=(movement,),
                    adjacent_right=f"{approach}{idx - 1}" if idx > 0 else None,
                    adjacent_left=f"{approach}{idx + 1}" if idx < n - 1 else None,
                )
            )
    return tuple(lanes)


def _build_signal_plan(lanes) -> SignalPlan:
    # Short greens with the 50 s maximum red keep the loaded lanes near
    # saturation, so queue discharge dominates crossing durations.
    ew_lanes = tuple(ln.id for ln in lanes if ln.approach in ("E", "W"))
    ns_lanes = tuple(ln.id for ln in lanes if ln.approach in ("N", "S"))
    return SignalPlan(
        groups=(
            SignalGroup("veh_EW", (("green", 15.0), ("yellow", 5.0), ("red", 50.0)), ew_lanes),
            SignalGroup(
                "veh_NS", (("red", 22.0), ("green", 15.0), ("yellow", 5.0), ("red", 28.0)),
                ns_lanes,
            ),
            # VRU crossings run parallel to the vehicle phase of their road.
            SignalGroup("vru_EW", (("green", 13.0), ("red", 57.0))),
            SignalGroup("vru_NS", (("red", 22.0), ("green", 13.0), ("red", 35.0))),
        ),
        cycle_length=70.0,
        offset=0.0,
    )


def _build_conflict_areas() -> tuple[ConflictArea, ...]:
    # Right-turn lanes cross a VRU path just past the stop line.
    return tuple(
        ConflictArea(
            id=f"CA_{lane}",
            lane=lane,
            start=STOP_LINE + 6.0,
            end=STOP_LINE + 16.0,
            involved_movements=(("right", "vru"),),
        )
        for lane in ("N0", "S0", "E0", "W0")
    )


def _build_vru_paths() -> tuple[VruPath, ...]:
    # Paths parallel to one road cross the mouths of the other road's
    # approaches, so their green runs while the crossed lanes show red.
    def path(pid, kind_group, area, x0, y0, x1, y1):
        return VruPath(
            id=pid,
            points=((x0, y0), (x1, y1)),
            signal_group=kind_group,
            stop_pos=10.0,
            crossings=(VruCrossing(conflict_area=area, arc_start=12.0, arc_end=30.0),),
        )

    return (
        path("P_EW_north", "vru_EW", "CA_N0", -21.0, 14.0, 21.0, 14.0),
        path("P_EW_south", "vru_EW", "CA_S0", 21.0, -14.0, -21.0, -14.0),
        path("P_NS_west", "vru_NS", "CA_W0", -14.0, -21.0, -14.0, 21.0),
        path("P_NS_east", "vru_NS", "CA_E0", 14.0, 21.0, 14.0, -21.0),
    )


def synthesize_demand(
    rates: dict[str, float],
    duration: float,
    seed: int,
    truck_share: float = DEFAULT_TRUCK_SHARE,
    vru_rate: float = DEFAULT_VRU_RATE,
    vru_paths: tuple[str, ...] = ("P_EW_north", "P_EW_south", "P_NS_west", "P_NS_east"),
    lane_movements: dict[str, str] | None = None,
) -> tuple[DemandEntry, ...]:
    """Seeded Poisson arrivals per lane and path, merged into one schedule."""
    lane_movements = lane_movements or {
        f"{a}{i}": m[i] for a, m in _LAYOUT.items() for i in range(len(m))
    }
    entries = []
    for lane, rate in sorted(rates.items()):
        if rate <= 0:
            continue
        rng = random.Random(f"{seed}|lane|{lane}")
        t = rng.expovariate(rate / 3600.0)
        movement = lane_movements[lane]
        while t < duration:
            kind = "truck" if (movement == "straight" and rng.random() < truck_share) else "car"
            entries.append(DemandEntry(time=round(t, 1), kind=kind, origin=lane,
                                       movement=movement))
            t += rng.expovariate(rate / 3600.0)
    for n, pid in enumerate(vru_paths):
        rng = random.Random(f"{seed}|vru|{pid}")
        kind = "cyclist" if n % 2 == 0 else "pedestrian"
        t = rng.expovariate(vru_rate / 3600.0)
        while t < duration:
            entries.append(DemandEntry(time=round(t, 1), kind=kind, origin=pid))
            t += rng.expovariate(vru_rate / 3600.0)
    entries.sort(key=lambda e: (e.time, e.origin))
    return tuple(entries)


def build_intersection_scenario(
    name: str = "default-intersection",
    rates: dict[str, float] | None = None,
    demand_duration: float = 3300.0,
    demand_seed: int = DEFAULT_DEMAND_SEED,
    truck_share: float = DEFAULT_TRUCK_SHARE,
    vru_rate: float = DEFAULT_VRU_RATE,
    demand: tuple[DemandEntry, ...] | None = None,
) -> Scenario:
    """The synthetic four-arm intersection with synthesized or explicit demand."""
    lanes = _build_lanes()
    scenario = Scenario(
        format_version=1,
        name=name,
        lanes=lanes,
        signal_plan=_build_signal_plan(lanes),
        conflict_areas=_build_conflict_areas(),
        vru_paths=_build_vru_paths(),
        static_obstacles=(
            StaticObstacle(lane="W2", pos=340.0),
            StaticObstacle(lane="S2", pos=340.0),
        ),
        demand=demand if demand is not None else synthesize_demand(
            rates or DEFAULT_RATES, demand_duration, demand_seed,
            truck_share=truck_share, vru_rate=vru_rate,
        ),
        measurement_zone=MeasurementZone(before_stop_line=250.0, after_exit=50.0),
        stop_line_to_reference=35.0,
        intersection_length=70.0,
    )
    validate_scenario(scenario)
    return scenario


def build_full_scale_scenario(demand_duration: float = 3300.0) -> Scenario:
    """Paper-scale demand (~1920 vehicles/h plus denser VRU traffic)."""
    factor = 1.92
    rates = {lane: rate * factor for lane, rate in DEFAULT_RATES.items()}
    return build_intersection_scenario(
        name="full-scale-intersection",
        rates=rates,
        demand_duration=demand_duration,
        vru_rate=DEFAULT_VRU_RATE * 5,
    )


def default_scenario_path() -> Path:
    """Filesystem path of the bundled default scenario file."""
    return Path(resources.files("coopsim").joinpath("data/default_scenario.yaml"))
