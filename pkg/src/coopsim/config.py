"""Tunable protocol and evaluation parameters, exposed in one place.

The infrastructure thresholds (sensing and reception ranges, the subscription
deadline) follow the assumptions stated for the intersection controller; the
evaluation weights and actuation magnitudes are reference-implementation
choices, since payoff computation is explicitly manufacturer-specific.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class PayoffParams:
    """Weights and normalizers of the local strategy evaluation."""

    w_safety: float = 0.6
    w_efficiency: float = 0.4
    coop_bonus: float = 0.5  # scaled by the vehicle's cooperative factor
    g_min: float = 2.5  # gap considered the safety zero point, metres
    g_norm: float = 10.0
    t_norm: float = 10.0
    horizon: float = 5.0  # rollout length, seconds
    rollout_dt: float = 0.1
    t_pass_cap: float = 30.0  # time-to-pass ceiling for blocked plans
    comfort_decel: float = 2.0


@dataclass(frozen=True)
class CooperationConfig:
    sensing_range: float = 150.0
    reception_range: float = 200.0
    deadline_distance: float = 150.0  # subscription completion, metres to stop line
    local_sensing_range: float = 100.0
    conflict_lookahead: float = 100.0  # D_c: obstacle search window for candidate 1
    pair_window: tuple[float, float] = (-30.0, 10.0)  # candidate 2 offset range
    dv_coop: float = 3.0  # speed reduction of the gap-creating strategy, m/s
    d_coop: float = 3.0  # ramp duration, seconds
    t_exec: float = 8.0  # maneuver timeout after commitment, seconds
    track_update_interval: int = 10  # ticks between unsubscription-phase updates
    eval_timeout: float = 3.0  # seconds to wait for the partner's evaluation
    signal_course_horizon: float = 120.0
    drop_probability: float = 0.0
    payoff: PayoffParams = field(default_factory=PayoffParams)
