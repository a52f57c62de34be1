"""Shared fixtures and synthetic-data helpers for the test suite."""

from __future__ import annotations

import sys

import numpy as np
import pytest

from driveintent.domain import Lane, LaneGeometry, ModeLabel, VehicleState
from driveintent.perception import Measurement, SensorConfig
from driveintent.simulation import (
    TICK_RATE,
    ModeEvent,
    ScenarioSpec,
    SurroundingSpec,
    TimestepRecord,
    Trace,
)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print the acceptance checklist verdicts after the run, where output
    capture is suspended and the lines are guaranteed to reach the terminal."""
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "CHECK_LINES", None) if mod is not None else None
    if lines:
        terminalreporter.section("acceptance checks")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def geometry() -> LaneGeometry:
    return LaneGeometry()


@pytest.fixture
def noiseless_sensor() -> SensorConfig:
    return SensorConfig(pos_noise_std=0.0, vel_noise_std=0.0)


def make_spec(
    scenario_id: str = "test",
    ego_speed: float = 17.0,
    ego_lane: Lane = Lane.RIGHT,
    surrounding: list | None = None,
    duration: float = 10.0,
) -> ScenarioSpec:
    if surrounding is None:
        surrounding = [SurroundingSpec(init_gap_x=40.0, lane=Lane.RIGHT, init_speed=17.0, final_speed=17.0)]
    return ScenarioSpec(
        scenario_id=scenario_id,
        ego_init_speed=ego_speed,
        ego_init_lane=ego_lane,
        surrounding=surrounding,
        episode_duration=duration,
    )


def make_synthetic_trace(
    py_of_tick,
    modes_of_tick,
    n_ticks: int,
    events: list[tuple[int, ModeLabel, ModeLabel]],
    vy_of_tick=None,
    others_of_tick=None,
    ego_vx: float = 17.0,
    episode_id: str = "synthetic-0",
    geometry: LaneGeometry | None = None,
) -> Trace:
    """Build a hand-scripted trace: callables give per-tick ego py/vy, mode,
    and optionally the true states of surrounding vehicles."""
    geometry = geometry or LaneGeometry()
    event_at = {tick: (frm, to) for tick, frm, to in events}
    records = []
    for k in range(n_ticks + 1):
        t = k / TICK_RATE
        py = py_of_tick(k)
        vy = vy_of_tick(k) if vy_of_tick is not None else 0.0
        others = others_of_tick(k) if others_of_tick is not None else []
        ego_state = VehicleState(px=ego_vx * t, py=py, vx=ego_vx, vy=vy, theta=0.0)
        measured = [
            Measurement(
                rel_x=o.px - ego_state.px,
                rel_y=o.py - ego_state.py,
                rel_vx=o.vx - ego_state.vx,
                index=i,
            )
            for i, o in enumerate(others)
        ]
        ev = event_at.get(k)
        records.append(
            TimestepRecord(
                time=t,
                ego=ego_state,
                ego_controls=(0.0, 0.0),
                others_true=others,
                others_measured=measured,
                mode=modes_of_tick(k),
                event=None
                if ev is None
                else ModeEvent(time=t, from_mode=ev[0], to_mode=ev[1]).sigma,
            )
        )
    mode_events = [
        ModeEvent(time=tick / TICK_RATE, from_mode=frm, to_mode=to)
        for tick, frm, to in events
    ]
    return Trace(
        scenario_id="synthetic",
        driver_id="synthetic",
        episode_id=episode_id,
        seed=0,
        config_digest="",
        geometry=geometry,
        n_others=0,
        records=records,
        mode_events=mode_events,
        collided=False,
        incomplete=False,
    )


def step_mode_fn(spans: list[tuple[int, ModeLabel]]):
    """Mode as a step function: spans = [(start_tick, mode), ...] sorted."""

    def modes_of_tick(k: int) -> ModeLabel:
        current = spans[0][1]
        for start, mode in spans:
            if k >= start:
                current = mode
        return current

    return modes_of_tick


def random_dataset(n: int = 200, d: int = 4, n_classes: int = 3, seed: int = 0):
    """Small synthetic LabeledDataset with learnable structure."""
    from driveintent.classifiers import LabeledDataset

    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 4.0, size=(n_classes, d))
    labels = rng.integers(0, n_classes, n)
    features = centers[labels] + rng.normal(0.0, 1.0, size=(n, d))
    groups = np.array([f"ep{(i % 10):02d}" for i in range(n)])
    return LabeledDataset(
        features=features,
        labels=labels.astype(int),
        groups=groups,
        driver_ids=np.array(["drv"] * n),
        vehicles_in_range=rng.integers(0, 4, n),
        masks=np.ones((n, 3), dtype=int),
        times=np.arange(n) / 60.0,
    )
