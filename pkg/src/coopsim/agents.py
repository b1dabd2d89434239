"""Per-vehicle controllers: the CHAV protocol state machine and local payoffs.

A connected vehicle walks through subscription, negotiation, execution and
unsubscription.  Payoffs for the negotiation come from a constant-behavior
kinematic rollout of the two cooperating vehicles over a short horizon, using
exclusively the vehicle's own situational overview (100 m own sensing fused
with infrastructure-provided tracks): safety scores the minimum predicted
bumper gap, efficiency the predicted own time-to-pass improvement over the
non-cooperative default, and the cooperative factor adds a bonus on the
gap-creating strategy of the supporting role.  Human-operated vehicles have
no agent at all.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import CooperationConfig, PayoffParams
from .dynamics import (
    CHAV_PARAMS,
    OBSTACLE_PARAMS,
    LaneChangeRequest,
    WorldState,
    clear_speed_command,
    insertion_ok,
    per_vehicle_rng,
    slow_down,
)
from .game import (
    Decision,
    Lateral,
    Longitudinal,
    PayoffMatrix,
    RejectReason,
    Strategy,
    decide,
    merge_evaluations,
)
from .v2x import TMS_ID, V2XBus

APPROACHING = "approaching"
SUBSCRIBED = "subscribed"
NEGOTIATING = "negotiating"
COMMITTED = "committed"
EXECUTING = "executing"
EXITING = "exiting"


@dataclass(frozen=True)
class RolloutBody:
    """Point mass with a length, projected forward inside an evaluation."""

    pos: float
    speed: float
    length: float


@dataclass
class EvalContext:
    """Everything one vehicle needs to price every strategy combination.

    Built purely from the vehicle's own state, its fused local overview and
    the recommendation payload; the partner's payoffs never enter.
    """

    role: int
    own: RolloutBody
    partner: RolloutBody
    lane2_others: list[RolloutBody]  # support-lane traffic except own/partner
    obstacle_front: float  # front bumper of the blocking obstacle on lane 1
    own_vmax: float
    fc: float


def _is_gap_creating(s: Strategy) -> bool:
    return s.longitudinal == Longitudinal.DECELERATE and s.lateral == Lateral.CONTINUE


def _ramp_speed(v0: float, t: float, dv: float, d_coop: float) -> float:
    return max(0.0, v0 - dv * (min(t, d_coop) / d_coop))


def _nearest(bodies, pos: float):
    """(leader, follower) around pos among (pos, speed, length) triples."""
    leader = follower = None
    for b in bodies:
        if b[0] >= pos:
            if leader is None or b[0] < leader[0]:
                leader = b
        else:
            if follower is None or b[0] > follower[0]:
                follower = b
    return leader, follower


def _gap_bounds(bodies, pos: float, length: float) -> float:
    """Smaller of the bumper gaps to the nearest leader and follower."""
    lead, fol = _nearest(bodies, pos)
    gap = float("inf")
    if lead is not None:
        gap = min(gap, lead[0] - lead[2] - pos)
    if fol is not None:
        gap = min(gap, pos - length - fol[0])
    return gap


def _rollout_role1(ctx: EvalContext, own_long: Longitudinal, partner_long: Longitudinal,
                   cfg: CooperationConfig, pp: PayoffParams) -> tuple[float, float]:
    """Lane-changing candidate: (g_pred, time to pass the obstacle)."""
    dt = pp.rollout_dt
    steps = round(pp.horizon / dt)
    min_gap, tau, a = pp.g_min, CHAV_PARAMS.reaction_time, CHAV_PARAMS.accel
    own_len = ctx.own.length
    cap = ctx.obstacle_front - OBSTACLE_PARAMS.length - min_gap
    pass_target = ctx.obstacle_front + own_len

    own_pos, own_v = ctx.own.pos, ctx.own.speed
    par_pos, par_v, par_v0 = ctx.partner.pos, ctx.partner.speed, ctx.partner.speed
    others = [(b.pos, b.speed, b.length) for b in ctx.lane2_others]

    merged = False
    waited_at_cap = False
    g_after_merge = float("inf")
    g_insert_best = float("-inf")
    t_pass = None

    for k in range(1, steps + 1):
        t = k * dt
        if own_long == Longitudinal.DECELERATE:
            own_v = max(0.0, own_v - pp.comfort_decel * dt)
        elif own_long == Longitudinal.ACCELERATE:
            own_v = min(ctx.own_vmax, own_v + a * dt)
        else:
            own_v = min(ctx.own_vmax, own_v + a * dt)
        if partner_long == Longitudinal.DECELERATE:
            par_v = _ramp_speed(par_v0, t, cfg.dv_coop, cfg.d_coop)
        else:
            par_v = min(CHAV_PARAMS.v_max, par_v + a * dt)

        own_pos += own_v * dt
        par_pos += par_v * dt
        others = [(p + s * dt, s, ln) for p, s, ln in others]
        if not merged and own_pos > cap:
            own_pos, own_v = cap, 0.0
            waited_at_cap = True

        lane2 = others + [(par_pos, par_v, ctx.partner.length)]
        if not merged:
            lead, fol = _nearest(lane2, own_pos)
            lead_t = (lead[0], lead[1], lead[2], min_gap, tau) if lead else None
            fol_t = (fol[0], fol[1], fol[2], min_gap, tau) if fol else None
            g_insert_best = max(g_insert_best, _gap_bounds(lane2, own_pos, own_len))
            if insertion_ok(own_pos, own_v, own_len, min_gap, tau, lead_t, fol_t):
                merged = True
        else:
            g_after_merge = min(g_after_merge, _gap_bounds(lane2, own_pos, own_len))
        if t_pass is None and merged and own_pos >= pass_target:
            t_pass = t

    if t_pass is None:
        if merged and own_v > 0.5:
            t_pass = pp.horizon + (pass_target - own_pos) / own_v
        else:
            t_pass = pp.t_pass_cap
    t_pass = min(t_pass, pp.t_pass_cap)

    if merged:
        g_pred = g_after_merge
        if waited_at_cap:
            g_pred = min(g_pred, min_gap)
        if g_pred == float("inf"):
            g_pred = min_gap + pp.g_norm
    else:
        g_pred = g_insert_best if g_insert_best != float("-inf") else min_gap
    return g_pred, t_pass


def _rollout_role2(ctx: EvalContext, own_long: Longitudinal, partner_long: Longitudinal,
                   partner_changes: bool, cfg: CooperationConfig,
                   pp: PayoffParams) -> tuple[float, float]:
    """Supporting candidate: (g_pred, time to advance the reference distance)."""
    dt = pp.rollout_dt
    steps = round(pp.horizon / dt)
    min_gap, tau, a = pp.g_min, CHAV_PARAMS.reaction_time, CHAV_PARAMS.accel
    own_len = ctx.own.length
    cap = ctx.obstacle_front - OBSTACLE_PARAMS.length - min_gap
    pass_target = ctx.own.pos + 100.0

    own_pos, own_v, own_v0 = ctx.own.pos, ctx.own.speed, ctx.own.speed
    par_pos, par_v = ctx.partner.pos, ctx.partner.speed
    others = [(b.pos, b.speed, b.length) for b in ctx.lane2_others]

    partner_on_lane2 = False
    g_seen = float("inf")
    t_pass = None

    for k in range(1, steps + 1):
        t = k * dt
        if own_long == Longitudinal.DECELERATE:
            own_v = _ramp_speed(own_v0, t, cfg.dv_coop, cfg.d_coop)
        else:
            own_v = min(ctx.own_vmax, own_v + a * dt)
        if partner_long == Longitudinal.DECELERATE:
            par_v = max(0.0, par_v - pp.comfort_decel * dt)
        else:
            par_v = min(CHAV_PARAMS.v_max, par_v + a * dt)

        own_pos += own_v * dt
        par_pos += par_v * dt
        others = [(p + s * dt, s, ln) for p, s, ln in others]
        if partner_changes and not partner_on_lane2 and par_pos > cap:
            par_pos, par_v = cap, 0.0

        if partner_changes and not partner_on_lane2:
            lane2_for_partner = others + [(own_pos, own_v, own_len)]
            lead, fol = _nearest(lane2_for_partner, par_pos)
            lead_t = (lead[0], lead[1], lead[2], min_gap, tau) if lead else None
            fol_t = (fol[0], fol[1], fol[2], min_gap, tau) if fol else None
            if insertion_ok(par_pos, par_v, ctx.partner.length, min_gap, tau,
                            lead_t, fol_t):
                partner_on_lane2 = True

        lane2 = others + (
            [(par_pos, par_v, ctx.partner.length)] if partner_on_lane2 else []
        )
        if lane2:
            g_seen = min(g_seen, _gap_bounds(lane2, own_pos, own_len))
        if t_pass is None and own_pos >= pass_target:
            t_pass = t

    if t_pass is None:
        t_pass = (pp.horizon + (pass_target - own_pos) / own_v if own_v > 0.5
                  else pp.t_pass_cap)
    t_pass = min(t_pass, pp.t_pass_cap)
    g_pred = g_seen if g_seen != float("inf") else min_gap + pp.g_norm
    return g_pred, t_pass


def evaluate_combination(ctx: EvalContext, own_strategy: Strategy,
                         partner_strategy: Strategy, cfg: CooperationConfig,
                         pp: PayoffParams, t_default: float) -> float:
    """Payoff of one strategy combination from this vehicle's perspective."""
    if ctx.role == 1:
        row, col = own_strategy, partner_strategy
        if own_strategy.lateral != Lateral.LANE_CHANGE:
            # Staying on the blocked lane ends at min_gap behind the obstacle;
            # the plan's terminal gap is its minimum predicted gap.
            g_pred, t_pass = pp.g_min, pp.t_pass_cap
        else:
            g_pred, t_pass = _rollout_role1(ctx, row.longitudinal, col.longitudinal,
                                            cfg, pp)
    else:
        row, col = partner_strategy, own_strategy
        g_pred, t_pass = _rollout_role2(
            ctx, col.longitudinal, row.longitudinal,
            partner_changes=row.lateral == Lateral.LANE_CHANGE, cfg=cfg, pp=pp,
        )
    safety = max(-1.0, min(1.0, (g_pred - pp.g_min) / pp.g_norm))
    efficiency = max(-1.0, min(1.0, (t_default - t_pass) / pp.t_norm))
    payoff = pp.w_safety * safety + pp.w_efficiency * efficiency
    if ctx.role == 2 and _is_gap_creating(own_strategy):
        payoff += ctx.fc * pp.coop_bonus
    return payoff


def default_time_to_pass(ctx: EvalContext, cfg: CooperationConfig,
                         pp: PayoffParams) -> float:
    """Own time-to-pass when nobody cooperates (the efficiency baseline)."""
    if ctx.role == 1:
        return _rollout_role1(ctx, Longitudinal.CONTINUE, Longitudinal.CONTINUE,
                              cfg, pp)[1]
    return _rollout_role2(ctx, Longitudinal.CONTINUE, Longitudinal.CONTINUE,
                          partner_changes=False, cfg=cfg, pp=pp)[1]


def evaluate_half_matrix(ctx: EvalContext, matrix: PayoffMatrix,
                         cfg: CooperationConfig, pp: PayoffParams) -> PayoffMatrix:
    """Fill this vehicle's side of the recommendation matrix, cell by cell."""
    t_default = default_time_to_pass(ctx, cfg, pp)
    values = []
    for row in matrix.rows:
        row_vals = []
        for col in matrix.cols:
            own_s, partner_s = (row, col) if ctx.role == 1 else (col, row)
            row_vals.append(
                evaluate_combination(ctx, own_s, partner_s, cfg, pp, t_default)
            )
        values.append(row_vals)
    return matrix.with_side_filled(ctx.role, values)


# -- the agent ----------------------------------------------------------------


class ChavAgent:
    """Protocol state machine of one connected highly automated vehicle."""

    def __init__(self, vehicle_id: str, cfg: CooperationConfig, fc: float,
                 payoff_params: PayoffParams, recorder=None):
        self.id = vehicle_id
        self.cfg = cfg
        self.fc = fc
        self.pp = payoff_params
        self.recorder = recorder
        self.phase = APPROACHING
        self.rec: dict | None = None  # active recommendation payload
        self.own_half: PayoffMatrix | None = None
        self.decision: Decision | None = None
        self.combination: tuple[str, str] | None = None
        self.negotiation_started: float = 0.0
        self.committed_at: float = 0.0
        self.maneuver_done = False
        self.tms_tracks: list[dict] = []
        self._last_update_tick = -(10 ** 9)

    # -- helpers ---------------------------------------------------------------

    def _own(self, world: WorldState):
        return world.vehicle(self.id)

    def local_overview(self, world: WorldState) -> dict[str, dict]:
        """Own ground-truth sensing within range, fused with TMS tracks."""
        me = self._own(world)
        tracks: dict[str, dict] = {}
        for tr in self.tms_tracks:
            if tr["id"] != self.id:
                tracks[tr["id"]] = tr
        approach = world.scenario.lane(me.lane).approach
        for v in world.vehicles:
            if v.id == self.id:
                continue
            if world.scenario.lane(v.lane).approach != approach:
                continue
            if abs(v.pos - me.pos) <= self.cfg.local_sensing_range:
                tracks[v.id] = {"id": v.id, "kind": v.kind, "lane": v.lane,
                                "pos": v.pos, "speed": v.speed,
                                "length": v.params.length}
        return tracks

    def _build_context(self, world: WorldState) -> EvalContext | None:
        rec = self.rec
        me = self._own(world)
        overview = self.local_overview(world)
        partner = overview.get(rec["partner"])
        if partner is None:
            return None
        lane2 = rec["lane2"]
        p_len = partner.get("length", CHAV_PARAMS.length)
        others = [
            RolloutBody(tr["pos"], tr["speed"], tr.get("length", CHAV_PARAMS.length))
            for tr in overview.values()
            if tr["lane"] == lane2 and tr["id"] not in (rec["partner"], self.id)
        ]
        role = rec["role"]
        own_body = RolloutBody(me.pos, me.speed, me.params.length)
        partner_body = RolloutBody(partner["pos"], partner["speed"], p_len)
        return EvalContext(
            role=role,
            own=own_body,
            partner=partner_body,
            lane2_others=others,
            obstacle_front=rec["obstacle_pos"],
            own_vmax=me.desired_speed,
            fc=self.fc,
        )

    # -- tick ------------------------------------------------------------------

    def on_tick(self, world: WorldState, bus: V2XBus):
        me = self._own(world)
        for msg in bus.take_inbox(self.id):
            if msg.kind == "subscription_response":
                self._on_subscription_response(msg.payload)
            elif msg.kind == "recommendation":
                self._on_recommendation(world, bus, msg.payload)
            elif msg.kind == "evaluation":
                self._on_partner_evaluation(world, msg.payload)

        if me.crossed_stop_line and self.phase != EXITING:
            if self.phase in (NEGOTIATING, COMMITTED, EXECUTING) and not self.maneuver_done:
                self._abort(world, "crossed stop line during negotiation")
            self.phase = EXITING
            clear_speed_command(world, self.id)
            if me.pending_change is not None and me.pending_change.reason == "cooperation":
                me.pending_change = None

        if self.phase == APPROACHING:
            self.maybe_subscribe(world, bus)
        elif self.phase == NEGOTIATING:
            if world.t - self.negotiation_started > self.cfg.eval_timeout:
                self._abort(world, "partner evaluation missing")
        elif self.phase == COMMITTED:
            self._start_execution(world)
        elif self.phase == EXECUTING:
            self._continue_execution(world)
        elif self.phase == EXITING:
            self.unsubscribe_updates(world, bus)

    # -- subscription phase -------------------------------------------------------

    def maybe_subscribe(self, world: WorldState, bus: V2XBus):
        me = self._own(world)
        scenario = world.scenario
        if scenario.distance_to_reference(me.lane, me.pos) > self.cfg.reception_range:
            return
        destination = me.lane
        lane = scenario.lane(me.lane)
        if me.movement not in lane.movements:
            for cand in (lane.adjacent_left, lane.adjacent_right):
                if cand and me.movement in scenario.lane(cand).movements:
                    destination = cand
                    break
        bus.send(world, self.id, TMS_ID, "subscription_request", {
            "vehicle_id": self.id,
            "driving_intention": me.movement,
            "destination_lane": destination,
        })

    def _on_subscription_response(self, payload: dict):
        self.tms_tracks = payload.get("dynamic_objects", [])
        if self.phase == APPROACHING:
            self.phase = SUBSCRIBED

    # -- negotiation ---------------------------------------------------------------

    def _on_recommendation(self, world: WorldState, bus: V2XBus, payload: dict):
        if self.phase != SUBSCRIBED:
            world.emit("recommendation_ignored", id=self.id, rec_id=payload["rec_id"],
                       phase=self.phase)
            return
        self.rec = payload
        ctx = self._build_context(world)
        if ctx is None:
            self._abort(world, "partner not in local overview")
            return
        matrix = PayoffMatrix.from_dict(payload["matrix"])
        self.own_half = evaluate_half_matrix(ctx, matrix, self.cfg, self.pp)
        self.phase = NEGOTIATING
        self.negotiation_started = world.t
        if self.recorder is not None:
            self.recorder.agent_evaluated(payload["rec_id"], payload["role"],
                                          self.id, self.own_half.to_dict(), self.fc)
        bus.submit_evaluation(world, self.id, payload["partner"], {
            "rec_id": payload["rec_id"],
            "role": payload["role"],
            "vehicle": self.id,
            "half": self.own_half.to_dict(),
        })

    def _on_partner_evaluation(self, world: WorldState, payload: dict):
        if self.phase != NEGOTIATING or self.rec is None:
            return
        if payload["rec_id"] != self.rec["rec_id"]:
            return
        partner_half = PayoffMatrix.from_dict(payload["half"])
        d = merge_evaluations(self.own_half, partner_half)
        decision = decide(d, tuple(self.rec["recommended"]))
        self.decision = decision
        if self.recorder is not None:
            self.recorder.agent_decision(self.rec["rec_id"], self.id,
                                         self.rec["role"], d.to_dict(),
                                         decision.to_dict(), world.t)
        world.emit("decision", id=self.id, rec_id=self.rec["rec_id"],
                   execute=decision.execute,
                   reason=decision.reason.value if decision.reason else None)
        if decision.execute:
            self.combination = decision.combination
            self.phase = COMMITTED
        else:
            self._reset_negotiation()

    def _abort(self, world: WorldState, why: str):
        if self.rec is not None:
            decision = Decision(False, reason=RejectReason.PROTOCOL_ABORT)
            if self.recorder is not None:
                self.recorder.agent_abort(self.rec["rec_id"], self.id, why, world.t)
            world.emit("negotiation_abort", id=self.id, rec_id=self.rec["rec_id"],
                       why=why)
            self.decision = decision
        self._reset_negotiation()

    def _reset_negotiation(self):
        self.rec = None
        self.own_half = None
        self.combination = None
        if self.phase in (NEGOTIATING, COMMITTED, EXECUTING):
            self.phase = SUBSCRIBED

    # -- execution ------------------------------------------------------------------

    def _own_strategy(self) -> Strategy | None:
        if self.rec is None or self.combination is None:
            return None
        matrix_rows = {s["id"]: Strategy.from_dict(s) for s in self.rec["matrix"]["rows"]}
        matrix_cols = {s["id"]: Strategy.from_dict(s) for s in self.rec["matrix"]["cols"]}
        row_id, col_id = self.combination
        return matrix_rows[row_id] if self.rec["role"] == 1 else matrix_cols[col_id]

    def _start_execution(self, world: WorldState):
        me = self._own(world)
        strategy = self._own_strategy()
        self.committed_at = world.t
        self.maneuver_done = False
        if strategy is not None:
            if strategy.lateral == Lateral.LANE_CHANGE:
                me.pending_change = LaneChangeRequest(target=self.rec["lane2"],
                                                      reason="cooperation")
            if strategy.longitudinal == Longitudinal.DECELERATE:
                slow_down(world, self.id, max(0.0, me.speed - self.cfg.dv_coop),
                          self.cfg.d_coop, hold=True)
        self.phase = EXECUTING
        world.emit("execution_start", id=self.id, rec_id=self.rec["rec_id"],
                   combination=list(self.combination))

    def _continue_execution(self, world: WorldState):
        if self.maneuver_done:
            return
        me = self._own(world)
        rec = self.rec
        strategy = self._own_strategy()
        elapsed = world.t - self.committed_at
        if rec["role"] == 1 and strategy and strategy.lateral == Lateral.LANE_CHANGE:
            if me.lane == rec["lane2"]:
                self.maneuver_done = True
                if self.recorder is not None:
                    self.recorder.execution_complete(rec["rec_id"], self.id, world.t)
                world.emit("coop_complete", id=self.id, rec_id=rec["rec_id"])
                return
            if elapsed > self.cfg.t_exec:
                me.pending_change = None
                if self.recorder is not None:
                    self.recorder.execution_timeout(rec["rec_id"], self.id, world.t)
                world.emit("coop_timeout", id=self.id, rec_id=rec["rec_id"])
                self._reset_negotiation()
                return
            if me.pending_change is None:
                me.pending_change = LaneChangeRequest(target=rec["lane2"],
                                                      reason="cooperation")
        else:
            # Supporting role: hold the reduced ceiling until the partner is
            # observed on this lane or the execution window closes.
            partner_merged = False
            try:
                partner = world.vehicle(rec["partner"])
                partner_merged = partner.lane == me.lane
            except KeyError:
                partner_merged = True  # partner already left the world
            if partner_merged or elapsed > self.cfg.t_exec:
                clear_speed_command(world, self.id)
                self.maneuver_done = True
                if self.recorder is not None and partner_merged:
                    self.recorder.execution_complete(rec["rec_id"], self.id, world.t)

    # -- unsubscription ---------------------------------------------------------------

    def unsubscribe_updates(self, world: WorldState, bus: V2XBus):
        me = self._own(world)
        if world.scenario.distance_to_reference(me.lane, me.pos) > self.cfg.reception_range:
            return
        if world.tick - self._last_update_tick < self.cfg.track_update_interval:
            return
        self._last_update_tick = world.tick
        bus.send(world, self.id, TMS_ID, "track_update", {
            "vehicle_id": self.id,
            "lane": me.lane,
            "pos": round(me.pos, 3),
            "speed": round(me.speed, 3),
        })


def draw_cooperative_factor(seed: int, vehicle_id: str) -> float:
    """Per-vehicle willingness to cooperate, drawn once at spawn."""
    return per_vehicle_rng(seed, vehicle_id, "fc").random()
