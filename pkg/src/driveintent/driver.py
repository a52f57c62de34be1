"""Scripted surrogate driver.

Stands in for a human subject: a three-mode machine (LaneKeep, Prepare,
LaneChange) whose transitions fire on time-metric thresholds, plus per-mode
continuous controllers.  Thresholds default to published driving statistics;
per-driver profiles draw them from the corresponding normal distributions.
Human imperfection enters twice: a reaction delay between a guard becoming
true and the transition firing, and post-hoc jitter on labeled event times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import TYPE_CHECKING, Optional

import numpy as np

from .domain import Lane, LaneGeometry, ModeLabel, VehicleState, derive_rng, lane_of
from .perception import (
    Measurement,
    SensorConfig,
    SlotGrid,
    assign_slots,
    compute_time_metrics,
)

if TYPE_CHECKING:
    from .simulation import ScenarioSpec

TICK_RATE = 60

# Lateral proportional gain: commanded lateral rate per meter of offset.
K_LAT = 1.2  # 1/s
MAX_LATERAL_RATE = 3.0  # m/s
LANE_SETTLE_POS = 0.15  # m
LANE_SETTLE_HEADING = 0.02  # rad


@dataclass
class DriverParams:
    """Thresholds and gains of one surrogate driver.

    The four time-metric fields default to the published per-subject means;
    the rest is calibration plumbing chosen so the closed loop reproduces
    the published timing statistics.

    :param ttc_prep_threshold: lead TTC at which preparation begins [s]
    :param ttc_lc_threshold: lead TTC at which a change becomes urgent [s]
    :param thw_prep_reference: headway-rate reference at Prepare entry [1/s]
    :param thw_lc_reference: headway-rate reference at change entry [1/s]
    :param abort_hysteresis: TTC margin above the prep threshold that
        releases an ongoing preparation [s]
    :param rttc_front_min: minimum front-gap rTTC to accept the adjacent
        lane [s]
    :param rttc_rear_min: minimum rear-gap rTTC to accept the adjacent
        lane [s]
    :param prep_lateral_bias: lateral offset toward the divider held while
        preparing [m]
    :param lc_nominal_duration: length of the lateral lane-change profile [s]
    :param desired_speed: cruise speed setpoint [m/s]
    :param reaction_delay_mean: mean delay between stimulus and mode
        transition [s]
    :param reaction_delay_std: spread of that delay [s]
    :param label_jitter_prob: probability that an event label is jittered
    :param label_jitter_std: spread of the label-time jitter [s]
    :param follow_ttc_target: car-following setpoint: speed chosen so the
        lead TTC settles at this value [s]
    :param k_speed: proportional speed-tracking gain [1/s]
    :param accel_limit: comfort acceleration bound used by the policy
        (within the plant's hard envelope) [m/s^2]
    """

    ttc_prep_threshold: float = 1.34
    ttc_lc_threshold: float = 1.20
    thw_prep_reference: float = 0.80
    thw_lc_reference: float = 0.96
    abort_hysteresis: float = 0.5
    rttc_front_min: float = 2.0
    rttc_rear_min: float = 2.0
    prep_lateral_bias: float = 0.3
    lc_nominal_duration: float = 2.5
    desired_speed: float = 17.5
    reaction_delay_mean: float = 0.3
    reaction_delay_std: float = 0.1
    label_jitter_prob: float = 0.05
    label_jitter_std: float = 0.2
    follow_ttc_target: float = 1.12
    k_speed: float = 1.4
    accel_limit: float = 4.0
    name: str = "default"

    def __post_init__(self) -> None:
        if self.ttc_lc_threshold > self.ttc_prep_threshold:
            raise ValueError(
                "ttc_lc_threshold must not exceed ttc_prep_threshold "
                f"({self.ttc_lc_threshold} > {self.ttc_prep_threshold})"
            )
        for f in fields(self):
            if f.name in ("label_jitter_prob", "name", "reaction_delay_mean",
                          "reaction_delay_std", "label_jitter_std"):
                continue
            if isinstance(getattr(self, f.name), float) and getattr(self, f.name) <= 0:
                raise ValueError(f"{f.name} must be strictly positive")
        if not 0.0 <= self.label_jitter_prob <= 1.0:
            raise ValueError("label_jitter_prob must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "DriverParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown driver parameter(s): {sorted(unknown)}")
        return cls(**d)


@dataclass
class DriverDecision:
    """Per-tick output of a driver policy."""

    accel: float
    lateral_rate_cmd: float
    mode: ModeLabel
    emitted_event: Optional[str] = None  # sigma name, set on the firing tick


def _slot_ttc(m: Optional[Measurement], v_e: float, cfg: SensorConfig) -> float:
    if m is None:
        return math.inf
    ttc, _, _, _ = compute_time_metrics(abs(m.rel_x), v_e, abs(m.rel_vx), cfg)
    return ttc


def _slot_rttc(m: Optional[Measurement], v_e: float, cfg: SensorConfig) -> float:
    if m is None:
        return math.inf
    _, _, rttc, _ = compute_time_metrics(abs(m.rel_x), v_e, abs(m.rel_vx), cfg)
    return rttc


def evaluate_transition(
    slots: SlotGrid,
    ego: VehicleState,
    ego_lane: Lane,
    current: ModeLabel,
    params: DriverParams,
    sensor_cfg: SensorConfig,
    geometry: LaneGeometry,
    lc_target_center: Optional[float],
) -> Optional[tuple[ModeLabel, str]]:
    """Evaluate the mode-transition guards; returns (next mode, sigma) or None.

    This is the pure part of the decision: no delays, no randomness.  Only
    the four legal edges exist — nothing else can ever be returned.
    """
    v_e = ego.speed
    if current is ModeLabel.LANE_KEEP:
        ttc1 = _slot_ttc(slots.slot1, v_e, sensor_cfg)
        if ttc1 <= params.ttc_prep_threshold:
            return ModeLabel.PREPARE, "sigma1"
        return None
    if current is ModeLabel.PREPARE:
        ttc1 = _slot_ttc(slots.slot1, v_e, sensor_cfg)
        if slots.slot1 is None or ttc1 >= params.ttc_prep_threshold + params.abort_hysteresis:
            return ModeLabel.LANE_KEEP, "sigma0"
        if ttc1 <= params.ttc_lc_threshold:
            front_ok = (
                slots.slot2 is None
                or _slot_rttc(slots.slot2, v_e, sensor_cfg) >= params.rttc_front_min
            )
            rear_ok = (
                slots.slot3 is None
                or _slot_rttc(slots.slot3, v_e, sensor_cfg) >= params.rttc_rear_min
            )
            if front_ok and rear_ok:
                return ModeLabel.LANE_CHANGE, "sigma2"
        return None
    # LaneChange: settle into the target lane
    if lc_target_center is None:
        lc_target_center = geometry.center_of(ego_lane)
    if (
        abs(ego.py - lc_target_center) < LANE_SETTLE_POS
        and abs(ego.theta) < LANE_SETTLE_HEADING
    ):
        return ModeLabel.LANE_KEEP, "sigma3"
    return None


def minimum_jerk(u: float) -> float:
    """Normalized minimum-jerk position profile, s(0)=0, s(1)=1."""
    if u <= 0.0:
        return 0.0
    if u >= 1.0:
        return 1.0
    # the quintic can exceed 1.0 by ~1e-15 for u within rounding of 1
    return min(u * u * u * (10.0 + u * (-15.0 + 6.0 * u)), 1.0)


def control_for_mode(
    mode: ModeLabel,
    ego: VehicleState,
    ego_lane: Lane,
    slots: SlotGrid,
    params: DriverParams,
    geometry: LaneGeometry,
    lc_progress: float = 0.0,
    lc_source_center: Optional[float] = None,
    lc_target_center: Optional[float] = None,
) -> tuple[float, float]:
    """Continuous controller g_q for the active mode.

    Longitudinal: proportional tracking of min(desired speed, follow-safe
    speed), where follow-safe = lead gap / follow_ttc_target — braking
    starts once holding speed would compress the lead TTC below the target.
    A lane change tracks desired speed directly (the lead is being escaped).

    Lateral: proportional rate command toward a mode-dependent target —
    lane center (LaneKeep), center + bias toward the divider (Prepare), or
    a minimum-jerk blend from source to target center (LaneChange).
    """
    v_e = ego.speed
    v_target = params.desired_speed
    if mode is not ModeLabel.LANE_CHANGE and slots.slot1 is not None:
        v_follow = abs(slots.slot1.rel_x) / params.follow_ttc_target
        v_target = min(v_target, v_follow)
    accel = params.k_speed * (v_target - v_e)
    accel = min(max(accel, -params.accel_limit), params.accel_limit)

    center = geometry.center_of(ego_lane)
    if mode is ModeLabel.LANE_KEEP:
        lateral_target = center
    elif mode is ModeLabel.PREPARE:
        toward_divider = 1.0 if ego_lane is Lane.RIGHT else -1.0
        lateral_target = center + toward_divider * params.prep_lateral_bias
    else:
        src = center if lc_source_center is None else lc_source_center
        dst = geometry.center_of(ego_lane.other) if lc_target_center is None else lc_target_center
        u = lc_progress / params.lc_nominal_duration
        lateral_target = src + (dst - src) * minimum_jerk(u)

    lateral_rate_cmd = K_LAT * (lateral_target - ego.py)
    lateral_rate_cmd = min(max(lateral_rate_cmd, -MAX_LATERAL_RATE), MAX_LATERAL_RATE)
    return accel, lateral_rate_cmd


class SurrogateDriver:
    """Driver-policy implementation of the scripted surrogate.

    Holds per-episode mutable state: the active mode, a pending delayed
    transition, and the lane-change bookkeeping.  One instance per episode
    loop; call begin_episode before the first step.
    """

    def __init__(
        self,
        params: DriverParams,
        sensor_cfg: Optional[SensorConfig] = None,
        geometry: Optional[LaneGeometry] = None,
    ) -> None:
        self.params = params
        self.sensor_cfg = sensor_cfg or SensorConfig()
        self.geometry = geometry or LaneGeometry()
        self.driver_id = params.name
        self._rng: np.random.Generator = np.random.default_rng(0)
        self.reset()

    def reset(self) -> None:
        self.mode = ModeLabel.LANE_KEEP
        self._pending: Optional[tuple[ModeLabel, str, int]] = None
        self._lc_start_tick = 0
        self._lc_source_center: Optional[float] = None
        self._lc_target_center: Optional[float] = None

    def begin_episode(self, spec: "ScenarioSpec", seed: int) -> None:
        self._rng = derive_rng(seed, "driver", self.params.name)
        self.reset()

    def _draw_delay_ticks(self) -> int:
        if self.params.reaction_delay_mean == 0.0 and self.params.reaction_delay_std == 0.0:
            return 0
        delay = self._rng.normal(
            self.params.reaction_delay_mean, self.params.reaction_delay_std
        )
        return max(0, round(max(delay, 0.0) * TICK_RATE))

    def decide_mode(
        self, tick: int, ego: VehicleState, ego_lane: Lane, slots: SlotGrid
    ) -> tuple[ModeLabel, Optional[str]]:
        """Advance the mode machine by one tick.

        A guard that becomes true schedules its transition after the drawn
        reaction delay; the pending transition then fires unconditionally at
        the scheduled tick (the decision was made — the hands follow).  At
        most one transition fires per tick.  With zero delay configured this
        reduces to a pure function of (slots, current mode).
        """
        emitted: Optional[str] = None
        if self._pending is not None:
            to_mode, sigma, fire_tick = self._pending
            if tick >= fire_tick:
                self._commit(tick, ego, ego_lane, to_mode)
                emitted = sigma
                self._pending = None
        else:
            hit = evaluate_transition(
                slots,
                ego,
                ego_lane,
                self.mode,
                self.params,
                self.sensor_cfg,
                self.geometry,
                self._lc_target_center,
            )
            if hit is not None:
                to_mode, sigma = hit
                delay = self._draw_delay_ticks()
                if delay == 0:
                    self._commit(tick, ego, ego_lane, to_mode)
                    emitted = sigma
                else:
                    self._pending = (to_mode, sigma, tick + delay)
        return self.mode, emitted

    def _commit(self, tick: int, ego: VehicleState, ego_lane: Lane, to_mode: ModeLabel) -> None:
        if to_mode is ModeLabel.LANE_CHANGE:
            self._lc_start_tick = tick
            self._lc_source_center = self.geometry.center_of(ego_lane)
            self._lc_target_center = self.geometry.center_of(ego_lane.other)
        elif self.mode is ModeLabel.LANE_CHANGE:
            self._lc_source_center = None
            self._lc_target_center = None
        self.mode = to_mode

    def step(
        self, tick: int, ego: VehicleState, measurements: list[Measurement]
    ) -> DriverDecision:
        ego_lane = lane_of(ego.py, self.geometry)
        slots = assign_slots(ego, ego_lane, measurements, self.geometry)
        mode, emitted = self.decide_mode(tick, ego, ego_lane, slots)
        lc_progress = (
            (tick - self._lc_start_tick) / TICK_RATE
            if mode is ModeLabel.LANE_CHANGE
            else 0.0
        )
        accel, lat = control_for_mode(
            mode,
            ego,
            ego_lane,
            slots,
            self.params,
            self.geometry,
            lc_progress,
            self._lc_source_center,
            self._lc_target_center,
        )
        return DriverDecision(accel, lat, mode, emitted)


def apply_label_noise(trace, params: DriverParams, rng: np.random.Generator):
    """Jitter labeled event times to emulate imperfect human labeling.

    Each mode event independently, with probability label_jitter_prob, moves
    by a tick-quantized Normal(0, label_jitter_std) offset.  Shifts are
    clamped so events stay strictly ordered and inside the record range;
    per-record mode fields are rewritten to match the shifted events.
    Returns a new Trace; the input is not modified.
    """
    from .simulation import ModeEvent, Trace  # local import to avoid a cycle

    events = trace.mode_events
    new_trace = Trace(
        scenario_id=trace.scenario_id,
        driver_id=trace.driver_id,
        episode_id=trace.episode_id,
        seed=trace.seed,
        config_digest=trace.config_digest,
        geometry=trace.geometry,
        n_others=trace.n_others,
        records=[replace(r) for r in trace.records],
        mode_events=[],
        collided=trace.collided,
        incomplete=trace.incomplete,
    )
    if not events:
        return new_trace

    last_tick = round(trace.records[-1].time * TICK_RATE)
    orig_ticks = [round(e.time * TICK_RATE) for e in events]
    new_ticks: list[int] = []
    for i, e in enumerate(events):
        tick = orig_ticks[i]
        if rng.random() < params.label_jitter_prob:
            shift = rng.normal(0.0, params.label_jitter_std)
            tick = tick + round(shift * TICK_RATE)
        lo = (new_ticks[i - 1] + 1) if i > 0 else 1
        hi = (orig_ticks[i + 1] - 1) if i + 1 < len(events) else last_tick
        tick = min(max(tick, lo), min(hi, last_tick))
        new_ticks.append(tick)

    new_trace.mode_events = [
        ModeEvent(t / TICK_RATE, e.from_mode, e.to_mode)
        for t, e in zip(new_ticks, events)
    ]

    # Rewrite per-record modes from the shifted event sequence.
    mode = events[0].from_mode
    ev_idx = 0
    for k, rec in enumerate(new_trace.records):
        event_name = None
        while ev_idx < len(new_ticks) and new_ticks[ev_idx] == k:
            mode = events[ev_idx].to_mode
            event_name = new_trace.mode_events[ev_idx].sigma
            ev_idx += 1
        rec.mode = mode
        rec.event = event_name
    return new_trace


# Published per-subject statistics: (mean, std) for each threshold field.
PROFILE_STATS = {
    "ttc_prep_threshold": (1.34, 0.17),
    "ttc_lc_threshold": (1.20, 0.14),
    "thw_prep_reference": (0.80, 0.11),
    "thw_lc_reference": (0.96, 0.12),
}

PROFILE_SPEED_RANGE = (16.5, 18.5)


def sample_profiles(
    count: int,
    seed: int,
    speed_range: tuple[float, float] = PROFILE_SPEED_RANGE,
) -> list[DriverParams]:
    """Draw per-driver profiles from the published distributions.

    Draws are lightly clamped to keep every profile physically coherent:
    thresholds stay positive and the change threshold stays strictly below
    the preparation threshold.
    """
    rng = derive_rng(seed, "profiles")
    profiles = []
    for i in range(count):
        name = f"driver_{chr(ord('a') + i % 26)}{'' if i < 26 else i // 26}"
        ttc_prep = float(np.clip(rng.normal(*PROFILE_STATS["ttc_prep_threshold"]), 1.0, 1.9))
        ttc_lc = float(np.clip(rng.normal(*PROFILE_STATS["ttc_lc_threshold"]), 1.08, 1.7))
        ttc_lc = min(ttc_lc, ttc_prep - 0.14)
        thw_prep = float(np.clip(rng.normal(*PROFILE_STATS["thw_prep_reference"]), 0.4, 1.3))
        thw_lc = float(np.clip(rng.normal(*PROFILE_STATS["thw_lc_reference"]), 0.4, 1.5))
        desired = float(rng.uniform(*speed_range))
        profiles.append(
            DriverParams(
                ttc_prep_threshold=ttc_prep,
                ttc_lc_threshold=ttc_lc,
                thw_prep_reference=thw_prep,
                thw_lc_reference=thw_lc,
                desired_speed=desired,
                name=name,
            )
        )
    return profiles
