"""Static road network: lanes, fixed-time signals, conflict areas, scenario files.

The network is purely 1-D: every lane has its own longitudinal coordinate
running from 0 (spawn point) over the stop line and through the intersection
to the lane end.  2-D geometry exists only implicitly through lane adjacency
and through the polylines of VRU paths.  A scenario is immutable after
loading and can safely be shared between parallel simulation runs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import (
    ScenarioParseError,
    ScenarioValidationError,
    UnknownGroupError,
    UnknownLaneError,
)

FORMAT_VERSION = 1

APPROACHES = ("N", "E", "S", "W")
MOVEMENTS = ("left", "straight", "right")
SIGNAL_STATES = ("red", "yellow", "green")
ENTITY_KINDS = ("car", "truck", "cyclist", "pedestrian")


@dataclass(frozen=True)
class LaneGeometry:
    """One approach lane, indexed 0-based from the rightmost lane."""

    id: str
    approach: str
    index: int
    length: float
    stop_line_pos: float
    movements: tuple[str, ...]
    adjacent_left: str | None = None
    adjacent_right: str | None = None


@dataclass(frozen=True)
class SignalGroup:
    """Cyclic list of (state, duration) intervals controlling a set of lanes."""

    id: str
    phases: tuple[tuple[str, float], ...]
    lanes: tuple[str, ...] = ()


@dataclass(frozen=True)
class SignalPlan:
    groups: tuple[SignalGroup, ...]
    cycle_length: float
    offset: float = 0.0


@dataclass(frozen=True)
class ConflictArea:
    """Lane segment where a (turning) movement conflicts with other traffic."""

    id: str
    lane: str
    start: float
    end: float
    involved_movements: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class VruCrossing:
    """Arc segment of a VRU path that lies inside a conflict area."""

    conflict_area: str
    arc_start: float
    arc_end: float


@dataclass(frozen=True)
class VruPath:
    """Polyline walked by cyclists or pedestrians, gated by one signal group."""

    id: str
    points: tuple[tuple[float, float], ...]
    signal_group: str
    stop_pos: float
    crossings: tuple[VruCrossing, ...] = ()

    @property
    def length(self) -> float:
        total = 0.0
        for (x0, y0), (x1, y1) in zip(self.points, self.points[1:]):
            total += ((x1 - x0) ** 2 + (y1 - y0) ** 2) ** 0.5
        return total


@dataclass(frozen=True)
class StaticObstacle:
    lane: str
    pos: float


@dataclass(frozen=True)
class DemandEntry:
    """One scheduled arrival. `origin` is a lane id for vehicles, a path id for VRUs."""

    time: float
    kind: str
    origin: str
    movement: str | None = None


@dataclass(frozen=True)
class MeasurementZone:
    """Crossing boundaries: metres before the stop line / after the intersection exit."""

    before_stop_line: float = 250.0
    after_exit: float = 50.0


@dataclass(frozen=True)
class Scenario:
    format_version: int
    name: str
    lanes: tuple[LaneGeometry, ...]
    signal_plan: SignalPlan
    conflict_areas: tuple[ConflictArea, ...] = ()
    vru_paths: tuple[VruPath, ...] = ()
    static_obstacles: tuple[StaticObstacle, ...] = ()
    demand: tuple[DemandEntry, ...] = ()
    measurement_zone: MeasurementZone = field(default_factory=MeasurementZone)
    stop_line_to_reference: float = 35.0
    intersection_length: float = 70.0

    # -- lookups ----------------------------------------------------------

    def lane(self, lane_id: str) -> LaneGeometry:
        try:
            return self._lane_map[lane_id]
        except KeyError:
            raise UnknownLaneError(lane_id) from None

    def group_of_lane(self, lane_id: str) -> str:
        self.lane(lane_id)
        return self._lane_group[lane_id]

    def vru_path(self, path_id: str) -> VruPath:
        try:
            return self._path_map[path_id]
        except KeyError:
            raise UnknownLaneError(path_id) from None

    def distance_to_stop_line(self, lane_id: str, pos: float) -> float:
        """Metres to the stop line; negative once the stop line is passed."""
        return self.lane(lane_id).stop_line_pos - pos

    def reference_pos(self, lane_id: str) -> float:
        """Longitudinal position of the intersection reference point on a lane."""
        return self.lane(lane_id).stop_line_pos + self.stop_line_to_reference

    def distance_to_reference(self, lane_id: str, pos: float) -> float:
        return abs(self.reference_pos(lane_id) - pos)

    def measurement_enter_pos(self, lane_id: str) -> float:
        return self.lane(lane_id).stop_line_pos - self.measurement_zone.before_stop_line

    def measurement_exit_pos(self, lane_id: str) -> float:
        lane = self.lane(lane_id)
        return lane.stop_line_pos + self.intersection_length + self.measurement_zone.after_exit

    def obstacles_on(self, lane_id: str) -> list[StaticObstacle]:
        return [o for o in self.static_obstacles if o.lane == lane_id]

    def digest(self) -> str:
        """Stable content hash, used as the 'digital map' in subscription responses."""
        blob = json.dumps(scenario_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def __post_init__(self):
        object.__setattr__(self, "_lane_map", {ln.id: ln for ln in self.lanes})
        object.__setattr__(self, "_path_map", {p.id: p for p in self.vru_paths})
        lane_group = {}
        for g in self.signal_plan.groups:
            for lane_id in g.lanes:
                lane_group[lane_id] = g.id
        object.__setattr__(self, "_lane_group", lane_group)

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return scenario_to_dict(self) == scenario_to_dict(other)


# -- signal timing ---------------------------------------------------------


def signal_state(plan: SignalPlan, group_id: str, t: float) -> str:
    """Signal state of `group_id` at time t, walking the cyclic interval list."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    group = None
    for g in plan.groups:
        if g.id == group_id:
            group = g
            break
    if group is None:
        raise UnknownGroupError(group_id)
    phase_t = (t + plan.offset) % plan.cycle_length
    acc = 0.0
    for state, duration in group.phases:
        acc += duration
        if phase_t < acc:
            return state
    return group.phases[-1][0]  # phase_t == cycle_length after float residue


def signal_course(
    plan: SignalPlan, group_id: str, t: float, horizon: float
) -> list[tuple[str, float, float]]:
    """Future (state, start, end) intervals of a group within [t, t+horizon]."""
    course = []
    cursor = t
    end = t + horizon
    while cursor < end:
        state = signal_state(plan, group_id, cursor)
        # Find the remaining duration of the current interval.
        group = next(g for g in plan.groups if g.id == group_id)
        phase_t = (cursor + plan.offset) % plan.cycle_length
        acc = 0.0
        remaining = plan.cycle_length
        for s, duration in group.phases:
            if phase_t < acc + duration:
                remaining = acc + duration - phase_t
                break
            acc += duration
        stop = min(end, cursor + remaining)
        course.append((state, cursor, stop))
        cursor = stop
    return course


def distance_to_stop_line(scenario: Scenario, lane_id: str, pos: float) -> float:
    return scenario.distance_to_stop_line(lane_id, pos)


# -- serialization ----------------------------------------------------------


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "format_version": s.format_version,
        "name": s.name,
        "stop_line_to_reference": s.stop_line_to_reference,
        "intersection_length": s.intersection_length,
        "measurement_zone": {
            "before_stop_line": s.measurement_zone.before_stop_line,
            "after_exit": s.measurement_zone.after_exit,
        },
        "lanes": [
            {
                "id": ln.id,
                "approach": ln.approach,
                "index": ln.index,
                "length": ln.length,
                "stop_line_pos": ln.stop_line_pos,
                "movements": list(ln.movements),
                "adjacent_left": ln.adjacent_left,
                "adjacent_right": ln.adjacent_right,
            }
            for ln in s.lanes
        ],
        "signal_plan": {
            "cycle_length": s.signal_plan.cycle_length,
            "offset": s.signal_plan.offset,
            "groups": [
                {
                    "id": g.id,
                    "phases": [[state, dur] for state, dur in g.phases],
                    "lanes": list(g.lanes),
                }
                for g in s.signal_plan.groups
            ],
        },
        "conflict_areas": [
            {
                "id": c.id,
                "lane": c.lane,
                "start": c.start,
                "end": c.end,
                "involved_movements": [list(p) for p in c.involved_movements],
            }
            for c in s.conflict_areas
        ],
        "vru_paths": [
            {
                "id": p.id,
                "points": [list(pt) for pt in p.points],
                "signal_group": p.signal_group,
                "stop_pos": p.stop_pos,
                "crossings": [
                    {
                        "conflict_area": c.conflict_area,
                        "arc_start": c.arc_start,
                        "arc_end": c.arc_end,
                    }
                    for c in p.crossings
                ],
            }
            for p in s.vru_paths
        ],
        "static_obstacles": [{"lane": o.lane, "pos": o.pos} for o in s.static_obstacles],
        "demand": [
            {"time": d.time, "kind": d.kind, "origin": d.origin, "movement": d.movement}
            for d in s.demand
        ],
    }


def scenario_from_dict(data: dict) -> Scenario:
    try:
        version = data["format_version"]
        if version != FORMAT_VERSION:
            raise ScenarioParseError(f"unsupported format_version {version!r}")
        lanes = tuple(
            LaneGeometry(
                id=ln["id"],
                approach=ln["approach"],
                index=int(ln["index"]),
                length=float(ln["length"]),
                stop_line_pos=float(ln["stop_line_pos"]),
                movements=tuple(ln["movements"]),
                adjacent_left=ln.get("adjacent_left"),
                adjacent_right=ln.get("adjacent_right"),
            )
            for ln in data["lanes"]
        )
        sp = data["signal_plan"]
        plan = SignalPlan(
            groups=tuple(
                SignalGroup(
                    id=g["id"],
                    phases=tuple((str(s), float(d)) for s, d in g["phases"]),
                    lanes=tuple(g.get("lanes", ())),
                )
                for g in sp["groups"]
            ),
            cycle_length=float(sp["cycle_length"]),
            offset=float(sp.get("offset", 0.0)),
        )
        areas = tuple(
            ConflictArea(
                id=c["id"],
                lane=c["lane"],
                start=float(c["start"]),
                end=float(c["end"]),
                involved_movements=tuple(tuple(p) for p in c["involved_movements"]),
            )
            for c in data.get("conflict_areas", ())
        )
        paths = tuple(
            VruPath(
                id=p["id"],
                points=tuple(tuple(float(v) for v in pt) for pt in p["points"]),
                signal_group=p["signal_group"],
                stop_pos=float(p["stop_pos"]),
                crossings=tuple(
                    VruCrossing(
                        conflict_area=c["conflict_area"],
                        arc_start=float(c["arc_start"]),
                        arc_end=float(c["arc_end"]),
                    )
                    for c in p.get("crossings", ())
                ),
            )
            for p in data.get("vru_paths", ())
        )
        obstacles = tuple(
            StaticObstacle(lane=o["lane"], pos=float(o["pos"]))
            for o in data.get("static_obstacles", ())
        )
        demand = tuple(
            DemandEntry(
                time=float(d["time"]),
                kind=d["kind"],
                origin=d["origin"],
                movement=d.get("movement"),
            )
            for d in data.get("demand", ())
        )
        zone = data.get("measurement_zone", {})
        scenario = Scenario(
            format_version=version,
            name=data.get("name", "unnamed"),
            lanes=lanes,
            signal_plan=plan,
            conflict_areas=areas,
            vru_paths=paths,
            static_obstacles=obstacles,
            demand=demand,
            measurement_zone=MeasurementZone(
                before_stop_line=float(zone.get("before_stop_line", 250.0)),
                after_exit=float(zone.get("after_exit", 50.0)),
            ),
            stop_line_to_reference=float(data.get("stop_line_to_reference", 35.0)),
            intersection_length=float(data.get("intersection_length", 70.0)),
        )
    except ScenarioParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioParseError(f"malformed scenario document: {exc!r}") from exc
    validate_scenario(scenario)
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    """Parse and validate a scenario file (YAML; JSON documents also parse)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioParseError(f"cannot read {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioParseError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ScenarioParseError(f"{path} does not contain a mapping at top level")
    return scenario_from_dict(data)


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(
        yaml.safe_dump(scenario_to_dict(scenario), sort_keys=False), encoding="utf-8"
    )


# -- validation --------------------------------------------------------------


def validate_scenario(s: Scenario) -> None:
    """Check every scenario invariant; raise ScenarioValidationError naming the rule."""

    def fail(rule: str, message: str):
        raise ScenarioValidationError(rule, message)

    lane_ids = {ln.id for ln in s.lanes}
    if len(lane_ids) != len(s.lanes):
        fail("lane.id", "duplicate lane ids")
    lane_by_id = {ln.id: ln for ln in s.lanes}

    for ln in s.lanes:
        if ln.length <= 0:
            fail("lane.length", f"{ln.id}: length must be > 0")
        if not 0 <= ln.stop_line_pos <= ln.length:
            fail("lane.stop_line_pos", f"{ln.id}: stop line outside [0, length]")
        if ln.approach not in APPROACHES:
            fail("lane.approach", f"{ln.id}: unknown approach {ln.approach!r}")
        if not ln.movements or not set(ln.movements) <= set(MOVEMENTS):
            fail("lane.movements", f"{ln.id}: invalid movement set {ln.movements!r}")
        for attr in ("adjacent_left", "adjacent_right"):
            other = getattr(ln, attr)
            if other is None:
                continue
            if other not in lane_by_id:
                fail("lane.adjacency", f"{ln.id}: {attr} references unknown lane {other!r}")
            mirror = "adjacent_right" if attr == "adjacent_left" else "adjacent_left"
            if getattr(lane_by_id[other], mirror) != ln.id:
                fail("lane.adjacency", f"{ln.id}/{other}: adjacency is not symmetric")

    plan = s.signal_plan
    group_ids = {g.id for g in plan.groups}
    if len(group_ids) != len(plan.groups):
        fail("signal.id", "duplicate signal group ids")
    bound_lanes = set()
    for g in plan.groups:
        total = sum(d for _, d in g.phases)
        if abs(total - plan.cycle_length) > 1e-9:
            fail("signal.durations", f"group {g.id}: durations sum to {total}, not cycle_length")
        states = {st for st, _ in g.phases}
        if not states <= set(SIGNAL_STATES):
            fail("signal.states", f"group {g.id}: unknown state in {states}")
        if "green" not in states or "red" not in states:
            fail("signal.phases", f"group {g.id}: needs at least one green and one red interval")
        for d in (d for _, d in g.phases):
            if d <= 0:
                fail("signal.durations", f"group {g.id}: nonpositive phase duration")
        for lane_id in g.lanes:
            if lane_id not in lane_by_id:
                fail("signal.lane_binding", f"group {g.id}: unknown lane {lane_id!r}")
            if lane_id in bound_lanes:
                fail("signal.lane_binding", f"lane {lane_id} bound to more than one group")
            bound_lanes.add(lane_id)
    unbound = lane_ids - bound_lanes
    if unbound:
        fail("signal.lane_binding", f"lanes without a signal group: {sorted(unbound)}")

    area_ids = set()
    for c in s.conflict_areas:
        if c.id in area_ids:
            fail("conflict_area.id", f"duplicate conflict area id {c.id}")
        area_ids.add(c.id)
        if c.lane not in lane_by_id:
            fail("conflict_area.location", f"{c.id}: unknown lane {c.lane!r}")
        lane = lane_by_id[c.lane]
        if not (0 <= c.start < c.end <= lane.length):
            fail("conflict_area.location", f"{c.id}: segment [{c.start}, {c.end}] invalid")

    for p in s.vru_paths:
        if len(p.points) < 2:
            fail("vru_path.points", f"{p.id}: polyline needs at least two points")
        if p.length <= 0:
            fail("vru_path.points", f"{p.id}: zero-length polyline")
        if p.signal_group not in group_ids:
            fail("vru_path.signal_group", f"{p.id}: unknown group {p.signal_group!r}")
        if not 0 <= p.stop_pos <= p.length:
            fail("vru_path.stop_pos", f"{p.id}: stop_pos outside path")
        for c in p.crossings:
            if c.conflict_area not in area_ids:
                fail("vru_path.crossings", f"{p.id}: unknown conflict area {c.conflict_area!r}")
            if not 0 <= c.arc_start < c.arc_end <= p.length:
                fail("vru_path.crossings", f"{p.id}: crossing segment invalid")

    for o in s.static_obstacles:
        if o.lane not in lane_by_id:
            fail("obstacle.position", f"unknown lane {o.lane!r}")
        lane = lane_by_id[o.lane]
        if not 0 <= o.pos <= lane.length:
            fail("obstacle.position", f"obstacle at {o.pos} outside lane {o.lane}")
        if o.pos > lane.stop_line_pos:
            fail("obstacle.position", f"obstacle on {o.lane} must be upstream of the stop line")

    path_ids = {p.id for p in s.vru_paths}
    last_t = 0.0
    for d in s.demand:
        if d.time < last_t:
            fail("demand.times", f"arrival times must be nondecreasing (at t={d.time})")
        last_t = d.time
        if d.kind not in ENTITY_KINDS:
            fail("demand.kind", f"unknown entity kind {d.kind!r}")
        if d.kind in ("car", "truck"):
            if d.origin not in lane_by_id:
                fail("demand.origin", f"unknown origin lane {d.origin!r}")
            if d.movement not in MOVEMENTS:
                fail("demand.movement", f"vehicle demand needs a movement, got {d.movement!r}")
            if d.movement not in lane_by_id[d.origin].movements:
                fail(
                    "demand.movement",
                    f"movement {d.movement!r} not allowed on origin lane {d.origin}",
                )
        else:
            if d.origin not in path_ids:
                fail("demand.origin", f"unknown origin path {d.origin!r}")

    zone = s.measurement_zone
    if zone.before_stop_line < 0 or zone.after_exit < 0:
        fail("measurement_zone.bounds", "zone margins must be >= 0")
    for ln in s.lanes:
        if ln.stop_line_pos - zone.before_stop_line < 0:
            fail(
                "measurement_zone.bounds",
                f"{ln.id}: measurement entry lies before lane start",
            )
        if ln.stop_line_pos + s.intersection_length + zone.after_exit > ln.length:
            fail(
                "measurement_zone.bounds",
                f"{ln.id}: measurement exit lies beyond lane end",
            )


def conflicting_green_overlaps(s: Scenario, step: float = 0.5) -> list[tuple]:
    """Instants where signal groups bound to the same conflict area are green together.

    For each conflict area the bound groups are the group of the area's lane
    plus the groups of every VRU path crossing the area.  Returns an empty
    list when the plan separates all such flows.
    """
    overlaps = []
    plan = s.signal_plan
    for area in s.conflict_areas:
        groups = {s.group_of_lane(area.lane)}
        for p in s.vru_paths:
            if any(c.conflict_area == area.id for c in p.crossings):
                groups.add(p.signal_group)
        if len(groups) < 2:
            continue
        t = 0.0
        while t < plan.cycle_length:
            green = [g for g in groups if signal_state(plan, g, t) == "green"]
            if len(green) > 1:
                overlaps.append((area.id, t, tuple(sorted(green))))
            t += step
    return overlaps
