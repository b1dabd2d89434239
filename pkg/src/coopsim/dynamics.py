"""Discrete-time microscopic motion with safe-speed car following.

Vehicles follow a Krauss-style model: the next speed is the minimum of the
desired speed, the acceleration-limited speed and a safe speed that keeps the
follower able to brake behind its effective leader, minus a random dawdling
term scaled by the driver imperfection.  Static obstacles are ordinary
vehicles with speed pinned to zero, red (and stoppable yellow) stop lines and
occupied conflict areas act as stationary virtual leaders.  Stepping a world
is bit-deterministic for a fixed (scenario, seed, dt).
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass

from .errors import LaneChangeRejected
from .network import Scenario, signal_state

KMH = 1 / 3.6


@dataclass(frozen=True)
class DriverParams:
    """Controller parameters; the CHAV/HV columns follow the comparison table."""

    v_max: float
    speed_deviation: float
    sigma: float
    reaction_time: float
    accel: float = 2.6
    decel: float = 4.5
    min_gap: float = 2.5
    length: float = 5.0

    def __post_init__(self):
        assert self.v_max > 0 and self.accel > 0 and self.decel > 0
        assert self.min_gap >= 0 and 0 <= self.sigma <= 1 and self.reaction_time > 0


CHAV_PARAMS = DriverParams(v_max=50 * KMH, speed_deviation=0.0, sigma=0.1, reaction_time=0.6)
HV_PARAMS = DriverParams(v_max=60 * KMH, speed_deviation=0.1, sigma=0.5, reaction_time=1.0)
TRUCK_PARAMS = DriverParams(
    v_max=60 * KMH, speed_deviation=0.1, sigma=0.5, reaction_time=1.0, length=12.0
)
OBSTACLE_PARAMS = DriverParams(v_max=1e-9, speed_deviation=0.0, sigma=0.0, reaction_time=1.0)

VRU_SPEEDS = {"cyclist": 4.2, "pedestrian": 1.35}

# Lookahead within which a blocking obstacle triggers a lane-change wish.
OBSTACLE_LOOKAHEAD = 80.0


def params_for(kind: str) -> DriverParams:
    return {
        "CHAV": CHAV_PARAMS,
        "HV": HV_PARAMS,
        "truck": TRUCK_PARAMS,
        "obstacle": OBSTACLE_PARAMS,
    }[kind]


@dataclass(slots=True)
class LaneChangeRequest:
    target: str
    reason: str  # "obstacle" or "cooperation"


@dataclass(slots=True)
class SpeedCommand:
    """Linear ceiling ramp from v0 to v_target over `duration` seconds.

    After the ramp the ceiling is released, unless `hold` keeps it at
    v_target until the command is explicitly cleared (used while a
    negotiated maneuver is still running).
    """

    t0: float
    v0: float
    v_target: float
    duration: float
    hold: bool = False

    def ceiling(self, t: float) -> float | None:
        rel = t - self.t0
        if rel < 0:
            return None
        if self.duration > 0 and rel <= self.duration:
            return self.v0 + (self.v_target - self.v0) * rel / self.duration
        if self.duration == 0 or self.hold:
            return self.v_target
        return None

    def expired(self, t: float) -> bool:
        return not self.hold and self.duration > 0 and t - self.t0 > self.duration


@dataclass(slots=True, eq=False)
class VehicleState:
    id: str
    kind: str  # CHAV | HV | truck | obstacle
    lane: str
    pos: float  # front bumper, metres from lane origin
    speed: float
    speed_factor: float
    params: DriverParams
    movement: str  # destination movement: left | straight | right
    spawn_index: int
    pending_change: LaneChangeRequest | None = None
    speed_cmd: SpeedCommand | None = None
    entered_zone: bool = False
    t_enter: float | None = None
    crossed_stop_line: bool = False
    leader_gap: float = math.inf  # effective gap to real leader, refreshed per tick
    leader_speed: float = 0.0

    @property
    def desired_speed(self) -> float:
        return self.speed_factor * self.params.v_max


@dataclass(slots=True, eq=False)
class VruState:
    id: str
    kind: str  # cyclist | pedestrian
    path: str
    arc_pos: float
    speed: float


class WorldState:
    """Full simulation snapshot advanced tick by tick.

    Vehicles are kept both in spawn order (`vehicles`, the deterministic
    iteration order for random draws) and per lane ordered by position
    (`lane_vehicles`, rear to front).
    """

    def __init__(self, scenario: Scenario, seed: int, dt: float = 0.1,
                 kind_for_car=None, check_invariants: bool = True):
        self.scenario = scenario
        self.seed = seed
        self.dt = dt
        self.t = 0.0
        self.tick = 0
        self.rng = random.Random(seed)
        self.check_invariants = check_invariants
        self.kind_for_car = kind_for_car or (lambda vid: "HV")

        self.vehicles: list[VehicleState] = []
        self.by_id: dict[str, VehicleState] = {}
        self.vrus: list[VruState] = []
        self.lane_vehicles: dict[str, list[VehicleState]] = {ln.id: [] for ln in scenario.lanes}
        self.events: list[dict] = []
        self.crossings: list[dict] = []
        self.red_light_violations: list[dict] = []

        self._demand_cursor = 0
        self._spawn_backlog: list = []
        self._group_states: dict[str, str] = {}
        self._lane_group = {ln.id: scenario.group_of_lane(ln.id) for ln in scenario.lanes}
        self._stop_pos = {ln.id: ln.stop_line_pos for ln in scenario.lanes}
        self._approach = {ln.id: ln.approach for ln in scenario.lanes}
        self._enter_pos = {ln.id: scenario.measurement_enter_pos(ln.id) for ln in scenario.lanes}
        self._exit_pos = {ln.id: scenario.measurement_exit_pos(ln.id) for ln in scenario.lanes}
        self._lane_obstacle_pos: dict[str, float | None] = {ln.id: None for ln in scenario.lanes}
        self._areas_by_lane: dict[str, list] = {ln.id: [] for ln in scenario.lanes}
        for area in scenario.conflict_areas:
            movements = {m for pair in area.involved_movements for m in pair}
            self._areas_by_lane[area.lane].append((area, movements))
        self._lanes_with_areas = [ln for ln, areas in self._areas_by_lane.items() if areas]
        self._area_crossings: dict[str, list] = {}
        for p in scenario.vru_paths:
            for c in p.crossings:
                self._area_crossings.setdefault(c.conflict_area, []).append(
                    (p.id, c.arc_start, c.arc_end)
                )

        for n, obs in enumerate(scenario.static_obstacles):
            v = VehicleState(
                id=f"obstacle{n}", kind="obstacle", lane=obs.lane, pos=obs.pos,
                speed=0.0, speed_factor=1.0, params=OBSTACLE_PARAMS,
                movement="straight", spawn_index=-1,
            )
            self._insert_into_lane(v)
            self.vehicles.append(v)
            self.by_id[v.id] = v
            lane_obs = self._lane_obstacle_pos[obs.lane]
            if lane_obs is None or obs.pos < lane_obs:
                self._lane_obstacle_pos[obs.lane] = obs.pos

        for g in scenario.signal_plan.groups:
            self._group_states[g.id] = signal_state(scenario.signal_plan, g.id, 0.0)

    # -- helpers -----------------------------------------------------------

    def emit(self, type_: str, **payload):
        payload["t"] = round(self.t, 6)
        payload["type"] = type_
        self.events.append(payload)

    def vehicle(self, vehicle_id: str) -> VehicleState:
        for v in self.vehicles:
            if v.id == vehicle_id:
                return v
        raise KeyError(vehicle_id)

    def signal_for_lane(self, lane_id: str) -> str:
        return self._group_states[self._lane_group[lane_id]]

    def neighbors_on(self, lane_id: str, pos: float):
        """(follower, leader) pair around `pos` on a lane."""
        leader = follower = None
        for other in self.lane_vehicles[lane_id]:
            if other.pos < pos:
                follower = other
            else:
                leader = other
                break
        return follower, leader

    def _insert_into_lane(self, v: VehicleState):
        lane = self.lane_vehicles[v.lane]
        i = 0
        while i < len(lane) and lane[i].pos < v.pos:
            i += 1
        lane.insert(i, v)


def per_vehicle_rng(seed: int, vehicle_id: str, purpose: str) -> random.Random:
    """Stream keyed by (seed, vehicle, purpose); stable across runs and modes."""
    digest = hashlib.sha256(f"{seed}|{purpose}|{vehicle_id}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def draw_speed_factor(seed: int, vehicle_id: str, params: DriverParams) -> float:
    """Normal(1, deviation) clipped to [1 - 2*dev, 1 + 2*dev]; exactly 1 when dev is 0."""
    dev = params.speed_deviation
    if dev == 0.0:
        return 1.0
    rng = per_vehicle_rng(seed, vehicle_id, "speed_factor")
    factor = rng.gauss(1.0, dev)
    return min(1.0 + 2 * dev, max(1.0 - 2 * dev, factor))


# -- core operations ---------------------------------------------------------


def safe_speed(gap: float, v_leader: float, b: float, tau: float) -> float:
    """Largest speed from which the follower can always brake behind the leader."""
    bt = b * tau
    return max(0.0, -bt + math.sqrt(bt * bt + v_leader * v_leader + 2.0 * b * gap))


def follow_step(vehicle: VehicleState, leaders, dt: float, rng,
                ceiling: float | None = None) -> float:
    """Next speed under the car-following rule.

    `leaders` is an iterable of (effective gap, leader speed) constraints; a
    red stop line is passed as a stationary leader with the remaining distance
    as gap.  The returned speed obeys every constraint, the acceleration limit
    and the desired speed, and is then reduced by dawdling:
    sigma * accel * dt * u with u drawn uniformly from rng.
    """
    p = vehicle.params
    v_des = min(vehicle.desired_speed, vehicle.speed + p.accel * dt)
    for gap, v_leader in leaders:
        v_des = min(v_des, safe_speed(gap, v_leader, p.decel, p.reaction_time))
    if ceiling is not None and ceiling < v_des:
        v_des = max(0.0, ceiling)
    if p.sigma > 0.0:
        v_des -= p.sigma * p.accel * dt * rng.random()
    return max(0.0, v_des)


def insertion_ok(pos: float, speed: float, length: float, min_gap: float, tau: float,
                 lead: tuple | None, fol: tuple | None) -> bool:
    """Anticipatory gap acceptance for inserting a body into a lane.

    `lead` and `fol` are (pos, speed, length, min_gap, tau) tuples or None.
    Requires min_gap to both neighbours, enlarged by the speed surplus of the
    approaching side times its reaction time so that nobody is forced into an
    emergency stop by the merge.  Agents use the same predicate inside their
    negotiation rollouts, keeping predicted and actual merges consistent.
    """
    if lead is not None:
        lead_gap = lead[0] - lead[2] - pos
        if lead_gap < min_gap + max(0.0, speed - lead[1]) * tau:
            return False
    if fol is not None:
        rear_gap = pos - length - fol[0]
        if rear_gap < fol[3] + max(0.0, fol[1] - speed) * fol[4]:
            return False
    return True


def merge_gaps_ok(mover: VehicleState, leader: VehicleState | None,
                  follower: VehicleState | None) -> bool:
    """Gap acceptance for a lane change of a live vehicle at the current instant."""
    p = mover.params
    lead = None
    if leader is not None:
        lp = leader.params
        lead = (leader.pos, leader.speed, lp.length, lp.min_gap, lp.reaction_time)
    fol = None
    if follower is not None:
        fp = follower.params
        fol = (follower.pos, follower.speed, fp.length, fp.min_gap, fp.reaction_time)
    return insertion_ok(mover.pos, mover.speed, p.length, p.min_gap, p.reaction_time,
                        lead, fol)


def _try_lane_change(world: WorldState, v: VehicleState, target: str) -> str | None:
    """Apply the change if permitted; return a rejection reason otherwise."""
    lane = world.scenario.lane(v.lane)
    if target not in (lane.adjacent_left, lane.adjacent_right):
        return "invalid_target"
    follower, leader = world.neighbors_on(target, v.pos)
    if not merge_gaps_ok(v, leader, follower):
        return "gap_rejected"
    world.lane_vehicles[v.lane].remove(v)
    old = v.lane
    v.lane = target
    world._insert_into_lane(v)
    world.emit("lane_change", id=v.id, from_lane=old, to_lane=target, pos=round(v.pos, 3),
               reason=v.pending_change.reason if v.pending_change else "manual")
    v.pending_change = None
    return None


def execute_lane_change(world: WorldState, vehicle_id: str, target: str) -> WorldState:
    """Move a vehicle to an adjacent lane at its current longitudinal position."""
    v = world.vehicle(vehicle_id)
    reason = _try_lane_change(world, v, target)
    if reason == "invalid_target":
        raise LaneChangeRejected(f"{target} is not adjacent to {v.lane}")
    if reason == "gap_rejected":
        raise LaneChangeRejected("insufficient gap on target lane")
    return world


def slow_down(world: WorldState, vehicle_id: str, target_speed: float,
              duration: float, hold: bool = False) -> WorldState:
    """Command a linear speed-ceiling ramp down to target_speed over duration."""
    assert target_speed >= 0
    v = world.vehicle(vehicle_id)
    v.speed_cmd = SpeedCommand(t0=world.t, v0=v.speed, v_target=target_speed,
                               duration=duration, hold=hold)
    return world


def clear_speed_command(world: WorldState, vehicle_id: str):
    world.vehicle(vehicle_id).speed_cmd = None


def request_lane_change(world: WorldState, vehicle_id: str, target: str, reason: str):
    """Record a lane-change wish; subsequent steps retry it until a gap allows."""
    v = world.vehicle(vehicle_id)
    if v.pending_change is None or v.pending_change.reason != "cooperation":
        v.pending_change = LaneChangeRequest(target=target, reason=reason)


def preferred_escape_lane(scenario: Scenario, v: VehicleState) -> str | None:
    """Adjacent lane a vehicle blocked by an obstacle should merge into."""
    lane = scenario.lane(v.lane)
    for candidate in (lane.adjacent_left, lane.adjacent_right):
        if candidate is None:
            continue
        cand = scenario.lane(candidate)
        if v.movement not in cand.movements:
            continue
        blocked = any(
            v.pos < o.pos <= cand.stop_line_pos for o in scenario.obstacles_on(candidate)
        )
        if not blocked:
            return candidate
    return None


def step(world: WorldState, dt: float | None = None) -> WorldState:
    """Advance the world by one tick; see module docstring for the update order."""
    dt = world.dt if dt is None else dt
    scenario = world.scenario
    t = world.t
    group_states = world._group_states

    # 1. Signal states, once per group per tick.
    plan = scenario.signal_plan
    for g in plan.groups:
        state = signal_state(plan, g.id, t)
        if state != group_states[g.id]:
            group_states[g.id] = state
            world.emit("signal_change", group=g.id, state=state)

    # 2. Spawn demand whose arrival time has elapsed (gap permitting).
    _spawn_due_demand(world, t)

    # 3. Obstacle-driven lane-change wishes (all vehicle kinds).
    lane_obstacles = world._lane_obstacle_pos
    for v in world.vehicles:
        if v.kind == "obstacle" or v.pending_change is not None:
            continue
        obs_pos = lane_obstacles[v.lane]
        if obs_pos is not None and v.pos < obs_pos <= v.pos + OBSTACLE_LOOKAHEAD:
            target = preferred_escape_lane(scenario, v)
            if target is not None:
                v.pending_change = LaneChangeRequest(target=target, reason="obstacle")

    # 4. Apply pending lane changes (spawn order; rejected ones stay pending).
    for v in world.vehicles:
        if v.pending_change is not None and v.kind != "obstacle":
            reason = _try_lane_change(world, v, v.pending_change.target)
            if reason == "invalid_target":
                v.pending_change = None

    # 5. Occupied conflict areas for this tick.
    occupied: set[str] = set()
    if world._area_crossings and world.vrus:
        for area_id, crossings in world._area_crossings.items():
            for path_id, arc_start, arc_end in crossings:
                if any(
                    vru.path == path_id and arc_start <= vru.arc_pos <= arc_end
                    for vru in world.vrus
                ):
                    occupied.add(area_id)
                    break

    # 6. Refresh per-vehicle leader constraints with one walk per lane.
    for lane_list in world.lane_vehicles.values():
        if not lane_list:
            continue
        front = lane_list[-1]
        front.leader_gap = math.inf
        front.leader_speed = 0.0
        for i in range(len(lane_list) - 1):
            v = lane_list[i]
            lead = lane_list[i + 1]
            v.leader_gap = lead.pos - lead.params.length - v.pos - v.params.min_gap
            v.leader_speed = lead.speed

    # 7. New speeds from the state at t (synchronous update, spawn order).
    lane_group = world._lane_group
    stop_pos = world._stop_pos
    areas_by_lane = world._areas_by_lane
    rng_random = world.rng.random
    sqrt = math.sqrt
    new_speeds: list[float] = []
    append_speed = new_speeds.append
    for v in world.vehicles:
        if v.kind == "obstacle":
            append_speed(0.0)
            continue
        p = v.params
        b = p.decel
        bt = b * p.reaction_time
        bt2 = bt * bt
        v_des = v.speed + p.accel * dt
        vmax = v.speed_factor * p.v_max
        if vmax < v_des:
            v_des = vmax
        gap = v.leader_gap
        if gap != math.inf:
            if gap < 0.0:
                gap = 0.0
            vl = v.leader_speed
            v_safe = -bt + sqrt(bt2 + vl * vl + 2.0 * b * gap)
            if v_safe < v_des:
                v_des = max(0.0, v_safe)
        stop = stop_pos[v.lane]
        if v.pos <= stop:
            state = group_states[lane_group[v.lane]]
            if state != "green":
                gap_sl = stop - v.pos
                if state == "red" or gap_sl >= v.speed * v.speed / (2.0 * b):
                    v_safe = -bt + sqrt(bt2 + 2.0 * b * gap_sl)
                    if v_safe < v_des:
                        v_des = max(0.0, v_safe)
            areas = areas_by_lane[v.lane]
            if areas and occupied:
                for area, movements in areas:
                    if area.id in occupied and v.movement in movements and v.pos < area.start:
                        v_safe = -bt + sqrt(bt2 + 2.0 * b * (area.start - v.pos))
                        if v_safe < v_des:
                            v_des = max(0.0, v_safe)
        if v.speed_cmd is not None:
            if v.speed_cmd.expired(t):
                v.speed_cmd = None
            else:
                ceiling = v.speed_cmd.ceiling(t)
                if ceiling is not None and ceiling < v_des:
                    v_des = ceiling if ceiling > 0.0 else 0.0
        if p.sigma > 0.0:
            v_des -= p.sigma * p.accel * dt * rng_random()
        append_speed(v_des if v_des > 0.0 else 0.0)

    # 8. Positions; red-compliance bookkeeping.
    for v, nv in zip(world.vehicles, new_speeds):
        if v.kind == "obstacle":
            continue
        old_pos = v.pos
        v.speed = nv
        v.pos = old_pos + nv * dt
        if not v.crossed_stop_line:
            stop = stop_pos[v.lane]
            if old_pos <= stop < v.pos:
                v.crossed_stop_line = True
                if group_states[lane_group[v.lane]] == "red":
                    world.red_light_violations.append({"t": t, "id": v.id, "lane": v.lane})

    if world.check_invariants:
        for lane_id, lane_list in world.lane_vehicles.items():
            for i in range(len(lane_list) - 1):
                rear, lead = lane_list[i], lane_list[i + 1]
                if lead.pos - lead.params.length - rear.pos < 0:
                    raise AssertionError(
                        f"negative gap on {lane_id} between {rear.id} and {lead.id} at t={t}"
                    )

    # 9. VRUs move along their paths, holding at the stop point on red.
    if world.vrus:
        finished_vrus = []
        for vru in world.vrus:
            path = scenario.vru_path(vru.path)
            new_arc = vru.arc_pos + vru.speed * dt
            if vru.arc_pos <= path.stop_pos < new_arc:
                if group_states[path.signal_group] != "green":
                    new_arc = path.stop_pos
            vru.arc_pos = new_arc
            if vru.arc_pos >= path.length:
                finished_vrus.append(vru)
        for vru in finished_vrus:
            world.vrus.remove(vru)
            world.emit("vru_removal", id=vru.id)

    # 10. Measurement-zone bookkeeping and removals past the exit.
    removed = None
    enter_pos = world._enter_pos
    exit_pos = world._exit_pos
    for v in world.vehicles:
        if v.kind == "obstacle":
            continue
        if not v.entered_zone and v.pos >= enter_pos[v.lane]:
            v.entered_zone = True
            v.t_enter = round(t + dt, 6)
            world.emit("enter_zone", id=v.id, lane=v.lane)
        if v.pos >= exit_pos[v.lane]:
            if removed is None:
                removed = []
            removed.append(v)
    if removed:
        for v in removed:
            world.vehicles.remove(v)
            world.lane_vehicles[v.lane].remove(v)
            world.crossings.append({
                "vehicle_id": v.id,
                "kind": v.kind,
                "approach": world._approach[v.lane],
                "t_enter": v.t_enter,
                "t_exit": round(t + dt, 6),
            })
            world.emit("removal", id=v.id, lane=v.lane, kind=v.kind)

    world.t = round(t + dt, 6)
    world.tick += 1
    return world


def _spawn_due_demand(world: WorldState, t: float):
    demand = world.scenario.demand
    cursor = world._demand_cursor
    while cursor < len(demand) and demand[cursor].time <= t:
        world._spawn_backlog.append((cursor, demand[cursor]))
        cursor += 1
    world._demand_cursor = cursor
    if not world._spawn_backlog:
        return

    still_blocked = []
    blocked_lanes: set[str] = set()
    for entry_index, entry in world._spawn_backlog:
        if entry.kind in ("cyclist", "pedestrian"):
            vru = VruState(
                id=f"vru{entry_index}", kind=entry.kind, path=entry.origin,
                arc_pos=0.0, speed=VRU_SPEEDS[entry.kind],
            )
            world.vrus.append(vru)
            world.emit("vru_spawn", id=vru.id, kind=vru.kind, path=vru.path)
            continue
        if entry.origin in blocked_lanes:
            still_blocked.append((entry_index, entry))
            continue
        vid = f"veh{entry_index}"
        kind = "truck" if entry.kind == "truck" else world.kind_for_car(vid)
        params = params_for(kind)
        spawn_pos = params.length
        lane_list = world.lane_vehicles[entry.origin]
        speed_factor = draw_speed_factor(world.seed, vid, params)
        desired = speed_factor * params.v_max
        if lane_list:
            rearmost = lane_list[0]
            gap = rearmost.pos - rearmost.params.length - spawn_pos
            if gap < params.min_gap:
                still_blocked.append((entry_index, entry))
                blocked_lanes.add(entry.origin)
                continue
            desired = min(
                desired,
                safe_speed(gap - params.min_gap, rearmost.speed, params.decel,
                           params.reaction_time),
            )
        v = VehicleState(
            id=vid, kind=kind, lane=entry.origin, pos=spawn_pos, speed=max(0.0, desired),
            speed_factor=speed_factor, params=params, movement=entry.movement or "straight",
            spawn_index=entry_index,
        )
        world.vehicles.append(v)
        world._insert_into_lane(v)
        world.emit("spawn", id=vid, kind=kind, lane=entry.origin,
                   movement=v.movement, speed=round(v.speed, 3))
    world._spawn_backlog = still_blocked
