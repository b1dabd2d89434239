"""Infrastructure-side controller: sensing, subscriptions, recommendations.

The controller keeps a real-time situational overview from idealized sensors,
answers subscription requests, spots cooperative-lane-change opportunities at
static obstacles and issues recommendations to pairs of connected vehicles.
It never touches any vehicle state: its only outputs are bus messages and log
entries, and it merely overhears the evaluation exchange to predict (not
influence) the outcome of each negotiation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .config import CooperationConfig
from .game import (
    CLC_RECOMMENDED,
    CLC_ROLE1_STRATEGIES,
    CLC_ROLE2_STRATEGIES,
    PayoffMatrix,
    decide,
    merge_evaluations,
)
from .network import Scenario, signal_course
from .v2x import TMS_ID, V2XBus


@dataclass(frozen=True)
class Track:
    id: str
    kind: str
    lane: str
    pos: float
    speed: float

    def to_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind, "lane": self.lane,
                "pos": round(self.pos, 3), "speed": round(self.speed, 3)}


@dataclass
class SubscriptionRecord:
    vehicle_id: str
    intention: str
    destination_lane: str
    subscribed_at: float
    deadline_met: bool  # fixed at completion, never recomputed


@dataclass
class SituationalOverview:
    t: float
    tracks: dict[str, Track]
    subscriptions: dict[str, SubscriptionRecord]
    signals: dict[str, str]


@dataclass(frozen=True)
class CandidatePair:
    chav1: str  # obstructed vehicle, benefits directly
    chav2: str  # supporting vehicle on the adjacent lane
    lane1: str
    lane2: str
    obstacle_pos: float


@dataclass
class CooperationRecommendation:
    rec_id: str
    chav1: str
    chav2: str
    maneuver: str
    matrix: PayoffMatrix  # all payoffs absent
    recommended: tuple[str, str]
    issued_at: float
    lane1: str = ""
    lane2: str = ""
    obstacle_pos: float = 0.0


# Strategy catalogue: ordered strategy lists per (maneuver kind, role).
DEFAULT_CATALOGUE = {
    ("CLC", 1): CLC_ROLE1_STRATEGIES,
    ("CLC", 2): CLC_ROLE2_STRATEGIES,
}


def sense(world, sensing_range: float = 150.0) -> dict[str, Track]:
    """Ground-truth tracks of every entity within sensing range (ideal sensors)."""
    scenario = world.scenario
    tracks = {}
    for v in world.vehicles:
        if scenario.distance_to_reference(v.lane, v.pos) <= sensing_range:
            tracks[v.id] = Track(v.id, v.kind, v.lane, v.pos, v.speed)
    for vru in world.vrus:
        # VRU paths live at the intersection itself, always inside the range.
        tracks[vru.id] = Track(vru.id, vru.kind, vru.path, vru.arc_pos, vru.speed)
    return tracks


def detect_conflicts(overview: SituationalOverview, scenario: Scenario,
                     cfg: CooperationConfig, busy: set[str]) -> list[CandidatePair]:
    """Candidate CLC pairs at static obstacles; pure in all of its inputs.

    Candidate 1 is the nearest vehicle behind an obstacle (skipped entirely
    unless it is a subscribed, deadline-compliant CHAV), candidate 2 the
    closest compliant CHAV on the escape lane inside the pairing window.
    """
    pairs = []
    subs = overview.subscriptions
    lo, hi = cfg.pair_window
    for obstacle in scenario.static_obstacles:
        behind = [
            tr for tr in overview.tracks.values()
            if tr.lane == obstacle.lane and tr.kind != "obstacle"
            and tr.pos < obstacle.pos <= tr.pos + cfg.conflict_lookahead
        ]
        if not behind:
            continue
        c1 = max(behind, key=lambda tr: tr.pos)
        if c1.kind != "CHAV" or c1.id in busy:
            continue
        sub1 = subs.get(c1.id)
        if sub1 is None or not sub1.deadline_met:
            continue
        lane = scenario.lane(obstacle.lane)
        target = None
        for cand in (lane.adjacent_left, lane.adjacent_right):
            if cand is not None and sub1.intention in scenario.lane(cand).movements:
                target = cand
                break
        if target is None:
            continue
        partners = []
        for tr in overview.tracks.values():
            if tr.lane != target or tr.kind != "CHAV" or tr.id in busy:
                continue
            sub2 = subs.get(tr.id)
            if sub2 is None or not sub2.deadline_met:
                continue
            offset = tr.pos - c1.pos
            if lo <= offset <= hi:
                partners.append((abs(offset), tr.id))
        if not partners:
            continue
        partners.sort()
        pairs.append(CandidatePair(
            chav1=c1.id, chav2=partners[0][1], lane1=obstacle.lane,
            lane2=target, obstacle_pos=obstacle.pos,
        ))
    return pairs


class TrafficManagementSystem:
    def __init__(self, scenario: Scenario, bus: V2XBus, cfg: CooperationConfig,
                 recorder=None, catalogue=None):
        self.scenario = scenario
        self.bus = bus
        self.cfg = cfg
        self.recorder = recorder
        self.catalogue = catalogue or DEFAULT_CATALOGUE
        self.subscriptions: dict[str, SubscriptionRecord] = {}
        self.exit_speed_means: dict[str, tuple[int, float]] = {}
        self.negotiations: dict[str, dict] = {}  # rec_id -> monitoring state
        self.busy_vehicles: set[str] = set()
        self._rec_seq = 0
        bus.register(TMS_ID)

    # -- subscription handling ------------------------------------------------

    def handle_subscription(self, world, payload: dict) -> SubscriptionRecord:
        vid = payload["vehicle_id"]
        existing = self.subscriptions.get(vid)
        if existing is not None:
            # Idempotent refresh: the deadline verdict is never recomputed.
            existing.intention = payload["driving_intention"]
            existing.destination_lane = payload["destination_lane"]
            record = existing
        else:
            try:
                vehicle = world.vehicle(vid)
                dist = self.scenario.distance_to_stop_line(vehicle.lane, vehicle.pos)
            except KeyError:
                return None
            record = SubscriptionRecord(
                vehicle_id=vid,
                intention=payload["driving_intention"],
                destination_lane=payload["destination_lane"],
                subscribed_at=world.t,
                deadline_met=dist >= self.cfg.deadline_distance,
            )
            self.subscriptions[vid] = record
            world.emit("subscription", id=vid, deadline_met=record.deadline_met,
                       distance=round(dist, 2))
        self._respond(world, record)
        return record

    def _respond(self, world, record: SubscriptionRecord):
        plan = self.scenario.signal_plan
        course = {
            g.id: [[state, round(a, 3), round(b, 3)] for state, a, b in
                   signal_course(plan, g.id, world.t, self.cfg.signal_course_horizon)]
            for g in plan.groups
        }
        tracks = sense(world, self.cfg.sensing_range)
        self.bus.send(world, TMS_ID, record.vehicle_id, "subscription_response", {
            "vehicle_id": record.vehicle_id,
            "signal_phase": dict(world._group_states),
            "signal_course": course,
            "map_digest": self.scenario.digest(),
            "static_obstacles": [
                {"lane": o.lane, "pos": o.pos} for o in self.scenario.static_obstacles
            ],
            "dynamic_objects": [tr.to_dict() for tr in tracks.values()],
        })

    # -- per-tick control ------------------------------------------------------

    def overview(self, world) -> SituationalOverview:
        return SituationalOverview(
            t=world.t,
            tracks=sense(world, self.cfg.sensing_range),
            subscriptions=self.subscriptions,
            signals=dict(world._group_states),
        )

    def on_tick(self, world):
        for msg in self.bus.take_inbox(TMS_ID):
            if msg.kind == "subscription_request":
                self.handle_subscription(world, msg.payload)
            elif msg.kind == "track_update":
                self.handle_track_update(msg.payload)
            elif msg.kind == "evaluation":
                self.monitor_evaluation(world, msg.payload)

        self._purge_subscriptions(world)
        self._release_finished_negotiations(world)

        overview = self.overview(world)
        for pair in detect_conflicts(overview, self.scenario, self.cfg,
                                     self.busy_vehicles):
            self.issue_recommendation(world, pair)

    def _purge_subscriptions(self, world):
        """Indirect unsubscription once a vehicle leaves the reception area."""
        known = {v.id for v in world.vehicles}
        gone = []
        for vid in self.subscriptions:
            if vid not in known:
                gone.append(vid)
                continue
            v = world.vehicle(vid)
            if self.scenario.distance_to_reference(v.lane, v.pos) > self.cfg.reception_range:
                gone.append(vid)
        for vid in gone:
            del self.subscriptions[vid]

    def _release_finished_negotiations(self, world):
        for neg in self.negotiations.values():
            if neg["open"] and world.t >= neg["release_at"]:
                neg["open"] = False
                if len(neg["halves"]) == 1:
                    neg["partial"] = True  # one evaluation never observed
                self.busy_vehicles.discard(neg["chav1"])
                self.busy_vehicles.discard(neg["chav2"])

    # -- recommendations ---------------------------------------------------------

    def build_recommendation(self, pair: CandidatePair, t: float) -> CooperationRecommendation | None:
        rows = self.catalogue.get(("CLC", 1))
        cols = self.catalogue.get(("CLC", 2))
        if rows is None or cols is None:
            return None
        self._rec_seq += 1
        return CooperationRecommendation(
            rec_id=f"rec{self._rec_seq}",
            chav1=pair.chav1,
            chav2=pair.chav2,
            maneuver="CLC",
            matrix=PayoffMatrix(rows, cols),
            recommended=CLC_RECOMMENDED,
            issued_at=t,
            lane1=pair.lane1,
            lane2=pair.lane2,
            obstacle_pos=pair.obstacle_pos,
        )

    def issue_recommendation(self, world, pair: CandidatePair):
        rec = self.build_recommendation(pair, world.t)
        if rec is None:
            world.emit("recommendation_skipped", reason="catalogue_missing",
                       chav1=pair.chav1, chav2=pair.chav2)
            return None
        self.busy_vehicles.add(pair.chav1)
        self.busy_vehicles.add(pair.chav2)
        self.negotiations[rec.rec_id] = {
            "rec_id": rec.rec_id,
            "chav1": rec.chav1,
            "chav2": rec.chav2,
            "recommended": list(rec.recommended),
            "halves": {},
            "predicted": None,
            "reconstructed": None,
            "partial": False,
            "open": True,
            # Fallback release when evaluations never show up (range/loss).
            "release_at": world.t + self.cfg.eval_timeout + self.cfg.t_exec,
        }
        for role, vid in ((1, rec.chav1), (2, rec.chav2)):
            partner = rec.chav2 if role == 1 else rec.chav1
            self.bus.send(world, TMS_ID, vid, "recommendation", {
                "rec_id": rec.rec_id,
                "role": role,
                "partner": partner,
                "maneuver": rec.maneuver,
                "matrix": rec.matrix.to_dict(),
                "recommended": list(rec.recommended),
                "lane1": rec.lane1,
                "lane2": rec.lane2,
                "obstacle_pos": rec.obstacle_pos,
                "issued_at": rec.issued_at,
            })
        if self.recorder is not None:
            self.recorder.recommendation_issued(rec)
        world.emit("recommendation", rec_id=rec.rec_id, chav1=rec.chav1,
                   chav2=rec.chav2, lane1=rec.lane1, lane2=rec.lane2)
        return rec

    def handle_track_update(self, payload: dict):
        lane = payload["lane"]
        count, mean = self.exit_speed_means.get(lane, (0, 0.0))
        count += 1
        mean += (payload["speed"] - mean) / count
        self.exit_speed_means[lane] = (count, mean)

    def monitor_evaluation(self, world, payload: dict):
        neg = self.negotiations.get(payload["rec_id"])
        if neg is None:
            return
        neg["halves"][payload["role"]] = payload["half"]
        if len(neg["halves"]) == 2:
            d = merge_evaluations(
                PayoffMatrix.from_dict(neg["halves"][1]),
                PayoffMatrix.from_dict(neg["halves"][2]),
            )
            prediction = decide(d, tuple(neg["recommended"]))
            neg["predicted"] = prediction.to_dict()
            neg["reconstructed"] = d.to_dict()
            if self.recorder is not None:
                self.recorder.tms_prediction(neg["rec_id"], neg["predicted"],
                                             neg["reconstructed"])
            if prediction.execute:
                neg["release_at"] = world.t + self.cfg.t_exec
            else:
                neg["release_at"] = world.t
