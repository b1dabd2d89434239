"""In-simulation V2X transport: range-gated, one-tick latency, zero reordering.

Messages sent during tick k are delivered at the start of tick k+1 to every
addressed recipient within reception range of the sender; out-of-range
recipients silently receive nothing.  Evaluation messages of a negotiation
are special: the bus holds them back until both halves are present and then
releases them in the same tick, which is what makes the negotiation a static
game — no vehicle can ever base its own evaluation on the partner's.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .errors import StalenessViolation

TMS_ID = "TMS"
BROADCAST = "*"

RECEPTION_RANGE = 200.0


@dataclass
class Message:
    msg_id: int
    sender: str
    recipient: str  # entity id, TMS_ID or BROADCAST
    sent_at: float
    kind: str  # subscription_request | subscription_response | recommendation
    #           | evaluation | track_update
    payload: dict = field(default_factory=dict)

    def canonical_bytes(self) -> bytes:
        """Stable byte serialization of the payload, for isolation checks."""
        return json.dumps(self.payload, sort_keys=True, separators=(",", ":")).encode()


def entity_distance(world, a: str, b: str) -> float:
    """1-D radio distance; vehicle-to-TMS is measured to the reference point."""
    scenario = world.scenario

    def ref_distance(entity: str) -> float:
        v = world.vehicle(entity)
        return scenario.distance_to_reference(v.lane, v.pos)

    if a == TMS_ID and b == TMS_ID:
        return 0.0
    if a == TMS_ID:
        return ref_distance(b)
    if b == TMS_ID:
        return ref_distance(a)
    va, vb = world.vehicle(a), world.vehicle(b)
    if scenario.lane(va.lane).approach == scenario.lane(vb.lane).approach:
        return abs(va.pos - vb.pos)
    return ref_distance(a) + ref_distance(b)


class V2XBus:
    """Owned by one simulation; mutated only inside the tick loop."""

    def __init__(self, reception_range: float = RECEPTION_RANGE,
                 drop_probability: float = 0.0, seed: int = 0):
        self.reception_range = reception_range
        self.drop_probability = drop_probability
        self._drop_rng = random.Random(f"{seed}|bus-drop")
        self._seq = 0
        self._outbox: list[Message] = []
        self._pending_evals: dict[str, dict[int, Message]] = {}
        self._eval_ready: list[str] = []
        self._delivered_evals: dict[str, set[int]] = {}
        self.inboxes: dict[str, list[Message]] = {TMS_ID: []}
        self.chav_ids: list[str] = []  # broadcast audience besides the TMS
        self.failed_exchanges: list[tuple[str, str]] = []  # (rec_id, why)

    def register(self, entity_id: str):
        if entity_id not in self.inboxes:
            self.inboxes[entity_id] = []
            if entity_id != TMS_ID:
                self.chav_ids.append(entity_id)

    def unregister(self, entity_id: str):
        self.inboxes.pop(entity_id, None)
        if entity_id in self.chav_ids:
            self.chav_ids.remove(entity_id)

    # -- sending -------------------------------------------------------------

    def send(self, world, sender: str, recipient: str, kind: str,
             payload: dict) -> Message:
        """Enqueue for delivery next tick; returns the message as receipt."""
        self._seq += 1
        msg = Message(self._seq, sender, recipient, world.t, kind, dict(payload))
        self._outbox.append(msg)
        world.emit("msg_send", msg_id=msg.msg_id, sender=sender, recipient=recipient,
                   kind=kind, payload=msg.payload)
        return msg

    def submit_evaluation(self, world, sender: str, recipient: str,
                          payload: dict) -> Message:
        """Hand one half-matrix to the exchange; held until the partner's arrives.

        Raises StalenessViolation when the partner's evaluation for the same
        recommendation was already delivered, which would break the
        static-game contract; the cooperation is then aborted by the caller.
        """
        rec_id = payload["rec_id"]
        role = payload["role"]
        if self._delivered_evals.get(rec_id):
            self.failed_exchanges.append((rec_id, "staleness"))
            raise StalenessViolation(
                f"evaluation for {rec_id} produced after partner delivery"
            )
        self._seq += 1
        msg = Message(self._seq, sender, recipient, world.t, "evaluation", dict(payload))
        world.emit("msg_send", msg_id=msg.msg_id, sender=sender, recipient=recipient,
                   kind="evaluation", payload=msg.payload)
        pending = self._pending_evals.setdefault(rec_id, {})
        pending[role] = msg
        if len(pending) == 2:
            self._eval_ready.append(rec_id)
        return msg

    def exchange_evaluations(self, world, e1_args, e2_args):
        """Submit both evaluations of one negotiation atomically (test surface)."""
        m1 = self.submit_evaluation(world, *e1_args[:2], e1_args[2])
        m2 = self.submit_evaluation(world, *e2_args[:2], e2_args[2])
        return m1, m2

    def force_deliver_evaluation(self, world, rec_id: str, role: int):
        """Deliver one held evaluation alone (protocol-violation test hook)."""
        msg = self._pending_evals.get(rec_id, {}).pop(role, None)
        if msg is None:
            raise KeyError(f"no pending evaluation {rec_id}/{role}")
        self._deliver_one(world, msg)
        self._delivered_evals.setdefault(rec_id, set()).add(role)

    # -- delivery --------------------------------------------------------------

    def _in_range(self, world, a: str, b: str) -> bool:
        try:
            return entity_distance(world, a, b) <= self.reception_range
        except KeyError:
            return False  # sender or recipient left the world

    def _dropped(self) -> bool:
        return self.drop_probability > 0.0 and self._drop_rng.random() < self.drop_probability

    def _deliver_one(self, world, msg: Message):
        targets = [msg.recipient] if msg.recipient != BROADCAST else (
            [TMS_ID] + [c for c in self.chav_ids if c != msg.sender]
        )
        for target in targets:
            if target not in self.inboxes:
                continue
            if not self._in_range(world, msg.sender, target):
                continue
            self.inboxes[target].append(msg)
            world.emit("msg_deliver", msg_id=msg.msg_id, recipient=target)

    def deliver(self, world):
        """Deliver everything queued before this tick; called once per tick."""
        outbox, self._outbox = self._outbox, []
        for msg in outbox:
            if self._dropped():
                continue
            self._deliver_one(world, msg)

        ready, self._eval_ready = self._eval_ready, []
        for rec_id in ready:
            pair = self._pending_evals.pop(rec_id, None)
            if pair is None or len(pair) != 2:
                continue
            if self._dropped():
                # Reliability is all-or-nothing per exchange: a drop kills both
                # halves so that the two vehicles always see the same picture.
                self.failed_exchanges.append((rec_id, "dropped"))
                continue
            for role in sorted(pair):
                msg = pair[role]
                self._deliver_one(world, msg)
                # The TMS overhears evaluations for monitoring purposes.
                if msg.recipient != TMS_ID and self._in_range(world, msg.sender, TMS_ID):
                    self.inboxes[TMS_ID].append(msg)
                    world.emit("msg_deliver", msg_id=msg.msg_id, recipient=TMS_ID)
                self._delivered_evals.setdefault(rec_id, set()).add(role)

    def take_inbox(self, entity_id: str) -> list[Message]:
        msgs = self.inboxes.get(entity_id, [])
        self.inboxes[entity_id] = []
        return msgs
