"""Fixed-step two-lane highway simulation.

The world advances with forward Euler at 60 Hz.  The ego vehicle is driven
by a pluggable policy (scripted surrogate or the live labeling session);
surrounding vehicles follow scripted speed ramps with constant-speed lane
keeping.  Every tick is recorded, giving the 60 Hz synchronized stream that
feature extraction and evaluation consume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Protocol, Sequence

import numpy as np

from .domain import (
    Lane,
    LaneGeometry,
    ModeLabel,
    VehicleState,
    boxes_overlap,
    derive_rng,
)
from .perception import Measurement, SensorConfig, sense

if TYPE_CHECKING:
    from .driver import DriverDecision

TICK_RATE = 60
DT = 1.0 / TICK_RATE

# Hard actuation envelope enforced by the plant model.
MAX_ACCEL = 6.0  # m/s^2
MAX_LATERAL_RATE = 3.0  # m/s
MAX_SPEED = 40.0  # m/s
LATERAL_LAG_TAU = 0.2  # s, first-order lag of vy toward the commanded rate

# Ego speed band the driver is asked to maintain.
SPEED_BAND = (15.0, 20.0)

EARLY_TERMINATION_GAP = 100.0  # m past all traffic

SIGMA_NAMES = {
    (ModeLabel.LANE_KEEP, ModeLabel.PREPARE): "sigma1",
    (ModeLabel.PREPARE, ModeLabel.LANE_CHANGE): "sigma2",
    (ModeLabel.LANE_CHANGE, ModeLabel.LANE_KEEP): "sigma3",
    (ModeLabel.PREPARE, ModeLabel.LANE_KEEP): "sigma0",
    # Only human labeling can commit a change straight from lane keeping
    # (the surrogate always passes through Prepare); it is still the
    # change-commit event.
    (ModeLabel.LANE_KEEP, ModeLabel.LANE_CHANGE): "sigma2",
}


class SimulationError(RuntimeError):
    pass


def step_vehicle(
    state: VehicleState, accel: float, lateral_rate_cmd: float, dt: float
) -> VehicleState:
    """Advance one vehicle by one Euler step.

    Longitudinal: vx integrates accel, clamped to [0, 40] m/s.  Lateral: vy
    chases the commanded rate through a first-order lag (time constant
    0.2 s) whose per-step change is capped at 3*dt*5, i.e. a 15 m/s^2
    lateral-acceleration limit.  Heading is recomputed from the velocity
    vector rather than integrated separately.
    """
    if not (
        math.isfinite(state.px)
        and math.isfinite(state.py)
        and math.isfinite(state.vx)
        and math.isfinite(state.vy)
        and math.isfinite(accel)
        and math.isfinite(lateral_rate_cmd)
        and math.isfinite(dt)
    ):
        raise SimulationError("step_vehicle: non-finite input")
    if dt <= 0.0:
        raise SimulationError("step_vehicle: dt must be positive")
    if abs(accel) > MAX_ACCEL + 1e-9:
        raise SimulationError(f"step_vehicle: |accel| > {MAX_ACCEL}")
    if abs(lateral_rate_cmd) > MAX_LATERAL_RATE + 1e-9:
        raise SimulationError(f"step_vehicle: |lateral_rate_cmd| > {MAX_LATERAL_RATE}")

    px = state.px + state.vx * dt
    py = state.py + state.vy * dt
    vx = min(max(state.vx + accel * dt, 0.0), MAX_SPEED)
    dv = (lateral_rate_cmd - state.vy) * (dt / LATERAL_LAG_TAU)
    lim = 3.0 * dt * 5.0
    if dv > lim:
        dv = lim
    elif dv < -lim:
        dv = -lim
    vy = state.vy + dv
    theta = math.atan2(vy, vx)
    return VehicleState(px, py, vx, vy, theta)


@dataclass(frozen=True)
class SurroundingSpec:
    """Scripted surrounding vehicle: spawn gap, lane, and a speed ramp."""

    init_gap_x: float  # m, relative to ego spawn (positive = ahead)
    lane: Lane
    init_speed: float  # m/s
    final_speed: float  # m/s
    speed_ramp_start: float = 0.0  # s
    speed_ramp_duration: float = 1.0  # s

    def speed_at(self, t: float) -> float:
        if t <= self.speed_ramp_start or self.final_speed == self.init_speed:
            return self.init_speed
        if t >= self.speed_ramp_start + self.speed_ramp_duration:
            return self.final_speed
        frac = (t - self.speed_ramp_start) / self.speed_ramp_duration
        return self.init_speed + frac * (self.final_speed - self.init_speed)


@dataclass(frozen=True)
class ScenarioSpec:
    """Fully resolved parameters of one episode."""

    scenario_id: str
    ego_init_speed: float
    ego_init_lane: Lane
    surrounding: tuple[SurroundingSpec, ...]
    episode_duration: float

    def validate(self, geometry: LaneGeometry) -> None:
        if not 1 <= len(self.surrounding) <= 3:
            raise ValueError(
                f"{self.scenario_id}: need 1-3 surrounding vehicles, "
                f"got {len(self.surrounding)}"
            )
        if not SPEED_BAND[0] <= self.ego_init_speed <= SPEED_BAND[1]:
            raise ValueError(
                f"{self.scenario_id}: ego speed {self.ego_init_speed} outside "
                f"[{SPEED_BAND[0]}, {SPEED_BAND[1]}]"
            )
        if self.episode_duration <= 0:
            raise ValueError(f"{self.scenario_id}: non-positive duration")
        for s in self.surrounding:
            ramp = abs(s.final_speed - s.init_speed)
            if ramp > 0 and s.speed_ramp_duration <= 0:
                raise ValueError(f"{self.scenario_id}: speed ramp needs a duration")
            if ramp > 0 and ramp / s.speed_ramp_duration > MAX_ACCEL:
                raise ValueError(
                    f"{self.scenario_id}: scripted ramp exceeds "
                    f"{MAX_ACCEL} m/s^2"
                )

    def initial_states(self, geometry: LaneGeometry) -> tuple[VehicleState, list[VehicleState]]:
        ego = VehicleState(
            0.0, geometry.center_of(self.ego_init_lane), self.ego_init_speed, 0.0, 0.0
        )
        others = [
            VehicleState(s.init_gap_x, geometry.center_of(s.lane), s.init_speed, 0.0, 0.0)
            for s in self.surrounding
        ]
        return ego, others

    def has_spawn_overlap(self, geometry: LaneGeometry) -> bool:
        ego, others = self.initial_states(geometry)
        all_states = [ego] + others
        for i in range(len(all_states)):
            for j in range(i + 1, len(all_states)):
                if boxes_overlap(all_states[i], all_states[j], geometry):
                    return True
        return False


@dataclass(slots=True)
class TimestepRecord:
    """One 60 Hz sample of the world plus the driver's active mode.

    ``mode`` is the label in force during [time, time + 1/60).  Controls are
    logged for analysis only — feature extraction never reads them.
    """

    time: float
    ego: VehicleState
    ego_controls: tuple[float, float]  # (accel, lateral_rate_cmd)
    others_true: list[VehicleState]
    others_measured: list[Measurement]
    mode: ModeLabel
    event: Optional[str] = None  # sigma-event name when the mode just changed


@dataclass
class ModeEvent:
    time: float
    from_mode: ModeLabel
    to_mode: ModeLabel

    @property
    def sigma(self) -> str:
        return SIGMA_NAMES[(self.from_mode, self.to_mode)]


@dataclass
class Trace:
    """One recorded episode."""

    scenario_id: str
    driver_id: str
    episode_id: str
    seed: int
    config_digest: str
    geometry: LaneGeometry
    n_others: int
    records: list[TimestepRecord] = field(default_factory=list)
    mode_events: list[ModeEvent] = field(default_factory=list)
    collided: bool = False
    incomplete: bool = False


class DriverPolicy(Protocol):
    """Interface between the episode loop and whoever drives the ego."""

    driver_id: str

    def begin_episode(self, spec: ScenarioSpec, seed: int) -> None: ...

    def step(
        self, tick: int, ego: VehicleState, measurements: list[Measurement]
    ) -> "DriverDecision": ...


@dataclass
class GridVehicleTemplate:
    """One surrounding vehicle of a traffic pattern, lane/speed still symbolic.

    ``lane`` is one of same/other/right/left (resolved against the ego lane);
    speeds are either absolute values or offsets from the ego's initial speed.
    """

    gap: float
    lane: str
    speed: tuple[str, float]  # ("abs", v) or ("ego", offset)
    final_speed: tuple[str, float]
    ramp_start: float = 0.0
    ramp_duration: float = 1.0

    def resolve_lane(self, ego_lane: Lane) -> Lane:
        if self.lane == "same":
            return ego_lane
        if self.lane == "other":
            return ego_lane.other
        if self.lane == "right":
            return Lane.RIGHT
        if self.lane == "left":
            return Lane.LEFT
        raise ValueError(f"unknown lane reference: {self.lane!r}")

    @staticmethod
    def _resolve_speed(ref: tuple[str, float], ego_speed: float) -> float:
        kind, value = ref
        if kind == "abs":
            return value
        if kind == "ego":
            return ego_speed + value
        raise ValueError(f"unknown speed reference kind: {kind!r}")

    def resolve(self, ego_speed: float, ego_lane: Lane) -> SurroundingSpec:
        return SurroundingSpec(
            init_gap_x=self.gap,
            lane=self.resolve_lane(ego_lane),
            init_speed=self._resolve_speed(self.speed, ego_speed),
            final_speed=self._resolve_speed(self.final_speed, ego_speed),
            speed_ramp_start=self.ramp_start,
            speed_ramp_duration=self.ramp_duration,
        )


@dataclass
class TrafficPattern:
    name: str
    vehicles: list[GridVehicleTemplate]
    duration: Optional[float] = None  # overrides the grid default


@dataclass
class GridConfig:
    """Candidate values for every scenario parameter; the grid is their product."""

    ego_speeds: list[float]
    ego_lanes: list[Lane]
    patterns: list[TrafficPattern]
    episode_duration: float = 24.0
    replicates: int = 1  # episodes per (scenario, profile) pair


def generate_scenarios(
    grid: GridConfig, seed: int, geometry: Optional[LaneGeometry] = None
) -> list[ScenarioSpec]:
    """Enumerate the Cartesian product of the grid, shuffled deterministically.

    Combinations whose spawn boxes overlap are dropped (not repaired); every
    surviving spec satisfies the ScenarioSpec invariants.
    """
    geometry = geometry or LaneGeometry()
    if not grid.ego_speeds or not grid.ego_lanes or not grid.patterns:
        raise SimulationError("scenario grid is empty")
    specs: list[ScenarioSpec] = []
    for speed in grid.ego_speeds:
        for lane in grid.ego_lanes:
            lane_token = "R" if lane is Lane.RIGHT else "L"
            for pattern in grid.patterns:
                surrounding = tuple(
                    v.resolve(speed, lane) for v in pattern.vehicles
                )
                spec = ScenarioSpec(
                    scenario_id=f"{pattern.name}-{lane_token}-v{speed:g}",
                    ego_init_speed=speed,
                    ego_init_lane=lane,
                    surrounding=surrounding,
                    episode_duration=pattern.duration or grid.episode_duration,
                )
                spec.validate(geometry)
                if spec.has_spawn_overlap(geometry):
                    continue
                specs.append(spec)
    rng = derive_rng(seed, "scenario-order")
    order = rng.permutation(len(specs))
    return [specs[i] for i in order]


def _scripted_accels(
    spec: ScenarioSpec, n_ticks: int
) -> list[np.ndarray]:
    """Per-vehicle accel schedule that makes vx track the scripted ramp exactly."""
    out = []
    t = np.arange(n_ticks + 1) * DT
    for s in spec.surrounding:
        v = np.array([s.speed_at(float(tk)) for tk in t])
        a = np.diff(v) / DT
        out.append(a)
    return out


def run_episode(
    spec: ScenarioSpec,
    driver: DriverPolicy,
    sensor_cfg: SensorConfig,
    seed: int,
    geometry: Optional[LaneGeometry] = None,
    episode_id: Optional[str] = None,
    config_digest: str = "",
) -> Trace:
    """Run one episode and record every tick.

    Loop order per tick: script traffic, sense, ask the driver, record, then
    advance all vehicles.  Ends at episode_duration, on collision (flagged),
    or early once the ego is more than 100 m past all traffic.
    """
    geometry = geometry or LaneGeometry()
    spec.validate(geometry)
    rng_sense = derive_rng(seed, "sense")
    driver.begin_episode(spec, seed)

    ego, others = spec.initial_states(geometry)
    indices = list(range(len(others)))
    n_ticks = round(spec.episode_duration * TICK_RATE)
    accel_sched = _scripted_accels(spec, n_ticks)

    trace = Trace(
        scenario_id=spec.scenario_id,
        driver_id=driver.driver_id,
        episode_id=episode_id or f"{driver.driver_id}:{spec.scenario_id}",
        seed=seed,
        config_digest=config_digest,
        geometry=geometry,
        n_others=len(others),
    )
    prev_mode = ModeLabel.LANE_KEEP

    for k in range(n_ticks + 1):
        t = k / TICK_RATE
        measurements = sense(ego, others, sensor_cfg, rng_sense, indices)
        decision = driver.step(k, ego, measurements)
        if not (
            math.isfinite(decision.accel) and math.isfinite(decision.lateral_rate_cmd)
        ):
            raise SimulationError(
                f"driver policy returned non-finite controls at timestep {k}"
            )
        event = None
        if k > 0 and decision.mode != prev_mode:
            trace.mode_events.append(ModeEvent(t, prev_mode, decision.mode))
            event = SIGMA_NAMES[(prev_mode, decision.mode)]
        prev_mode = decision.mode
        trace.records.append(
            TimestepRecord(
                time=t,
                ego=ego.copy(),
                ego_controls=(decision.accel, decision.lateral_rate_cmd),
                others_true=[o.copy() for o in others],
                others_measured=measurements,
                mode=decision.mode,
                event=event,
            )
        )

        if any(boxes_overlap(ego, o, geometry) for o in others):
            trace.collided = True
            break
        if others and all(ego.px - o.px > EARLY_TERMINATION_GAP for o in others):
            break
        if k == n_ticks:
            break

        ego = step_vehicle(ego, decision.accel, decision.lateral_rate_cmd, DT)
        others = [
            step_vehicle(o, float(accel_sched[i][k]), 0.0, DT)
            for i, o in enumerate(others)
        ]

    return trace


def vehicles_in_range(
    ego: VehicleState, others_true: Sequence[VehicleState], radius: float
) -> int:
    """Count of surrounding vehicles within the detection radius, from truth."""
    n = 0
    for o in others_true:
        dx = o.px - ego.px
        dy = o.py - ego.py
        if dx * dx + dy * dy <= radius * radius:
            n += 1
    return n
