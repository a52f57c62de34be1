"""Interactive session service: wire protocol, labeling, trace output."""

import asyncio
import json
import os

import pytest
import websockets
import yaml

from driveintent.config import load_config
from driveintent.dataset_io import build_dataset, read_trace, split_episodes
from driveintent.domain import Lane, LaneGeometry, ModeLabel
from driveintent.perception import SensorConfig
from driveintent.session import (
    PROTOCOL_VERSION,
    Session,
    _send,
    _serve,
    headless_check,
    run_scripted_client,
)
from driveintent.simulation import ScenarioSpec
from conftest import make_synthetic_trace, step_mode_fn

SESSION_CONFIG = """
seed: 99
label_noise: false
geometry: {lane_width: 3.5, right_center_y: 0.0, vehicle_length: 4.5, vehicle_width: 1.8}
sensor: {detection_radius: 50.0, pos_noise_std: 0.1, vel_noise_std: 0.1}
profiles: {count: 1}
split: {train_fraction: 0.7}
grid:
  ego_speeds: [16.5]
  ego_lanes: [right]
  episode_duration: 8.0
  patterns:
    - name: cruise
      vehicles:
        - {gap: 45.0, lane: same, speed: {ego: 2.5}}
    - name: brake
      vehicles:
        - {gap: 42.0, lane: same, speed: {ego: 0.0}, final_speed: {ego: -5.0},
           ramp_start: 2.0, ramp_duration: 2.0}
serve:
  decimation: 3
"""

CRUISE = "cruise-R-v16.5"


@pytest.fixture(scope="module")
def cfg(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "session.yaml"
    p.write_text(SESSION_CONFIG)
    return load_config(str(p))


async def with_server(cfg, seed, out_dir, client):
    """Run `client(port)` against a private server instance."""
    loop = asyncio.get_running_loop()
    ready = loop.create_future()
    server = asyncio.ensure_future(_serve(cfg, seed, 0, str(out_dir), ready=ready))
    port = await ready
    try:
        return await client(port)
    finally:
        server.cancel()
        try:
            await server
        except asyncio.CancelledError:
            pass


def run_script(cfg, seed, out_dir, script, **kwargs):
    async def client(port):
        return await run_scripted_client(
            f"ws://{cfg.serve.host}:{port}", script, **kwargs
        )

    return asyncio.run(with_server(cfg, seed, out_dir, client))


LABEL_SCRIPT = [
    (5, {"accel": 0.25, "steer_rate": 0.0, "client_time": 0.05}, []),
    (20, None, [{"event": "PrepareOn", "client_time": -50.0}]),
    (40, None, [{"event": "ExecuteLaneChange", "client_time": 12345.6}]),
]


class TestHandshake:
    def test_ack_carries_session_parameters(self, cfg, tmp_path):
        out = run_script(cfg, 7, tmp_path, [], scenario_request=CRUISE, driver_id="probe")
        hs = out["handshake"]
        assert hs["kind"] == "handshake_ack"
        assert hs["protocol_version"] == PROTOCOL_VERSION
        assert hs["scenario_id"] == CRUISE
        assert hs["episode_id"] == f"probe-{CRUISE}-s7"
        assert hs["tick_rate"] == 60
        assert hs["decimation"] == 3
        assert hs["duration"] == 8.0
        assert hs["n_others"] == 1
        assert hs["lockstep"] is True
        assert hs["geometry"]["lane_width"] == 3.5

    def test_version_mismatch_refused(self, cfg, tmp_path):
        out = run_script(cfg, 7, tmp_path, [], protocol_version=99)
        assert out["handshake"]["kind"] == "error"
        assert out["handshake"]["code"] == "version_mismatch"
        assert out["end"] is None
        assert out["ticks"] == 0

    def test_unknown_scenario_refused(self, cfg, tmp_path):
        out = run_script(cfg, 7, tmp_path, [], scenario_request="figment")
        assert out["handshake"]["code"] == "bad_scenario"

    def test_non_handshake_first_message_refused(self, cfg, tmp_path):
        async def client(port):
            async with websockets.connect(f"ws://{cfg.serve.host}:{port}") as ws:
                await _send(ws, {"kind": "tick"})
                return json.loads(await ws.recv())

        reply = asyncio.run(with_server(cfg, 7, tmp_path, client))
        assert reply == {
            "kind": "error",
            "code": "bad_handshake",
            "text": "expected handshake",
        }


class TestScriptedSession:
    def test_no_control_holds_speed_and_mode(self, cfg, tmp_path):
        out = run_script(cfg, 3, tmp_path, [], scenario_request=CRUISE)
        end = out["end"]
        assert end["kind"] == "session_end"
        summary = end["summary"]
        assert summary["controls_received"] == 0
        assert summary["labels_received"] == 0
        assert summary["mode_events"] == 0
        assert summary["collided"] is False
        trace = read_trace(end["trace_path"])
        assert all(r.mode is ModeLabel.LANE_KEEP for r in trace.records)
        assert all(r.ego.vx == 16.5 for r in trace.records)
        assert all(r.ego.py == 0.0 for r in trace.records)
        assert len(trace.records) == 8 * 60 + 1

    def test_labels_timestamped_with_server_time(self, cfg, tmp_path):
        out = run_script(cfg, 3, tmp_path, LABEL_SCRIPT, scenario_request=CRUISE)
        end = out["end"]
        trace = read_trace(end["trace_path"])
        # step 20 -> tick 60 -> 1.0 s; step 40 -> tick 120 -> 2.0 s,
        # regardless of the wildly skewed client clock
        assert [(e.sigma, e.time) for e in trace.mode_events] == [
            ("sigma1", 1.0),
            ("sigma2", 2.0),
        ]
        log = end["summary"]["label_log"]
        assert [1.0, "PrepareOn", -50.0] in log
        assert [2.0, "ExecuteLaneChange", 12345.6] in log

    def test_reruns_are_byte_identical(self, cfg, tmp_path):
        a = run_script(cfg, 3, tmp_path / "a", LABEL_SCRIPT, scenario_request=CRUISE)
        b = run_script(cfg, 3, tmp_path / "b", LABEL_SCRIPT, scenario_request=CRUISE)
        bytes_a = open(a["end"]["trace_path"], "rb").read()
        bytes_b = open(b["end"]["trace_path"], "rb").read()
        assert a["end"]["trace_path"] != b["end"]["trace_path"]
        assert bytes_a == bytes_b

    def test_control_is_zero_order_held_between_wire_ticks(self, cfg, tmp_path):
        script = [(5, {"accel": 0.5, "steer_rate": 0.0, "client_time": 0.0}, [])]
        out = run_script(cfg, 3, tmp_path, script, scenario_request=CRUISE)
        trace = read_trace(out["end"]["trace_path"])
        # before step 5 (tick 15): zero accel; from tick 15 on: 0.5 * 4 m/s^2
        assert trace.records[14].ego_controls[0] == 0.0
        for k in (15, 16, 17, 30, 100):
            assert trace.records[k].ego_controls[0] == 2.0
        assert trace.records[200].ego.vx > 16.5

    def test_simultaneous_labels_coalesce_to_one_event(self, cfg, tmp_path):
        script = [
            (
                10,
                None,
                [
                    {"event": "PrepareOn", "client_time": 1.0},
                    {"event": "ExecuteLaneChange", "client_time": 1.0},
                ],
            )
        ]
        out = run_script(cfg, 3, tmp_path, script, scenario_request=CRUISE)
        trace = read_trace(out["end"]["trace_path"])
        assert len(trace.mode_events) == 1
        ev = trace.mode_events[0]
        assert ev.from_mode is ModeLabel.LANE_KEEP
        assert ev.to_mode is ModeLabel.LANE_CHANGE
        assert len(out["end"]["summary"]["label_log"]) == 2

    def test_closed_loop_lane_change_auto_returns(self, cfg, tmp_path):
        """A feedback client steers to the left lane after labeling; the
        session ends the change itself once the ego settles there."""

        async def client(port):
            uri = f"ws://{cfg.serve.host}:{port}"
            async with websockets.connect(uri) as ws:
                await _send(
                    ws,
                    {
                        "kind": "handshake",
                        "protocol_version": PROTOCOL_VERSION,
                        "scenario_request": CRUISE,
                        "driver_id": "feedback",
                        "lockstep": True,
                    },
                )
                hs = json.loads(await ws.recv())
                assert hs["kind"] == "handshake_ack"
                target = 3.5
                step = 0
                end = None
                while True:
                    msg = json.loads(await ws.recv())
                    if msg["kind"] == "session_end":
                        end = msg
                        break
                    if msg["kind"] != "tick":
                        continue
                    px, py, vx, vy, theta = msg["ego"]
                    labels = []
                    if step == 10:
                        labels.append({"event": "PrepareOn", "client_time": step / 20})
                    if step == 20:
                        labels.append(
                            {"event": "ExecuteLaneChange", "client_time": step / 20}
                        )
                    steer = 0.0
                    if msg["mode"] == int(ModeLabel.LANE_CHANGE):
                        # PD toward the target lane center, normalized
                        steer = max(-1.0, min(1.0, (1.6 * (target - py) - 0.9 * vy) / 2.0))
                    await _send(
                        ws,
                        {
                            "kind": "step_ack",
                            "control": {"accel": 0.0, "steer_rate": steer, "client_time": 0.0},
                            "labels": labels,
                        },
                    )
                    step += 1
                return end

        end = asyncio.run(with_server(cfg, 5, tmp_path, client))
        trace = read_trace(end["trace_path"])
        sigmas = [e.sigma for e in trace.mode_events]
        assert sigmas == ["sigma1", "sigma2", "sigma3"]
        assert trace.records[-1].mode is ModeLabel.LANE_KEEP
        assert abs(trace.records[-1].ego.py - 3.5) < 0.2
        assert not trace.collided

    def test_bad_messages_answered_without_killing_session(self, cfg, tmp_path):
        async def client(port):
            uri = f"ws://{cfg.serve.host}:{port}"
            async with websockets.connect(uri) as ws:
                await _send(
                    ws,
                    {
                        "kind": "handshake",
                        "protocol_version": PROTOCOL_VERSION,
                        "scenario_request": CRUISE,
                        "driver_id": "rowdy",
                        "lockstep": True,
                    },
                )
                hs = json.loads(await ws.recv())
                assert hs["kind"] == "handshake_ack"
                errors = []
                sent_garbage = False
                end = None
                while True:
                    msg = json.loads(await ws.recv())
                    if msg["kind"] == "session_end":
                        end = msg
                        break
                    if msg["kind"] == "error":
                        errors.append(msg["code"])
                        continue
                    if msg["kind"] != "tick":
                        continue
                    if not sent_garbage:
                        await ws.send("this is not json")
                        await _send(ws, {"kind": "mystery"})
                        await _send(ws, {"kind": "label", "event": "Teleport"})
                        sent_garbage = True
                    await _send(ws, {"kind": "step_ack", "control": None, "labels": []})
                return errors, end

        errors, end = asyncio.run(with_server(cfg, 3, tmp_path, client))
        assert "bad_message" in errors
        assert "bad_kind" in errors
        assert "bad_label" in errors
        assert end is not None  # the session survived and finished cleanly

    def test_disconnect_writes_partial_trace(self, cfg, tmp_path):
        async def client(port):
            uri = f"ws://{cfg.serve.host}:{port}"
            async with websockets.connect(uri) as ws:
                await _send(
                    ws,
                    {
                        "kind": "handshake",
                        "protocol_version": PROTOCOL_VERSION,
                        "scenario_request": CRUISE,
                        "driver_id": "dropper",
                        "lockstep": True,
                    },
                )
                json.loads(await ws.recv())
                for _ in range(10):
                    msg = json.loads(await ws.recv())
                    assert msg["kind"] == "tick"
                    await _send(ws, {"kind": "step_ack", "control": None, "labels": []})
                # vanish without closing the session properly
            for _ in range(50):
                path = os.path.join(
                    str(tmp_path), f"dropper-{CRUISE}-s3.jsonl"
                )
                if os.path.exists(path):
                    return path
                await asyncio.sleep(0.05)
            raise AssertionError("partial trace never appeared")

        path = asyncio.run(with_server(cfg, 3, tmp_path, client))
        trace = read_trace(path)
        assert trace.incomplete is True
        assert 0 < len(trace.records) < 100

        # downstream assembly refuses nothing but quietly excludes it
        quiet = make_synthetic_trace(
            py_of_tick=lambda k: 0.0,
            modes_of_tick=step_mode_fn([(0, ModeLabel.LANE_KEEP)]),
            n_ticks=100,
            events=[],
            episode_id="filler-a",
        )
        quiet2 = make_synthetic_trace(
            py_of_tick=lambda k: 0.0,
            modes_of_tick=step_mode_fn([(0, ModeLabel.LANE_KEEP)]),
            n_ticks=100,
            events=[],
            episode_id="filler-b",
        )
        manifest = split_episodes(
            [trace.episode_id, "filler-a", "filler-b"], 0.5, seed=0
        )
        built = build_dataset(
            [trace, quiet, quiet2],
            manifest,
            SensorConfig(pos_noise_std=0.0, vel_noise_std=0.0),
            LaneGeometry(),
        )
        assert built.excluded_episodes == [(trace.episode_id, "incomplete")]


class TestSessionTraceInPipeline:
    def test_labeled_session_trace_trains_downstream(self, cfg, tmp_path):
        out = run_script(cfg, 3, tmp_path, LABEL_SCRIPT, scenario_request=CRUISE)
        trace = read_trace(out["end"]["trace_path"])
        quiet = make_synthetic_trace(
            py_of_tick=lambda k: 0.0,
            modes_of_tick=step_mode_fn([(0, ModeLabel.LANE_KEEP)]),
            n_ticks=200,
            events=[],
            episode_id="filler",
        )
        manifest = split_episodes([trace.episode_id, "filler"], 0.5, seed=1)
        # force the labeled session episode into the training side
        manifest.assignment[trace.episode_id] = "train"
        manifest.assignment["filler"] = "test"
        built = build_dataset(
            [trace, quiet],
            manifest,
            SensorConfig(pos_noise_std=0.0, vel_noise_std=0.0),
            LaneGeometry(),
        )
        assert set(built.train.labels.tolist()) == {0, 1, 2}
        from driveintent.classifiers import predict, train_lr

        model = train_lr(built.train)
        preds = predict(model, built.test.features)
        assert len(preds) == len(built.test.labels)


class TestAutoReturnRule:
    def make_session(self, cfg):
        spec = ScenarioSpec(
            scenario_id="unit",
            ego_init_speed=16.5,
            ego_init_lane=Lane.RIGHT,
            surrounding=(),
            episode_duration=1.0,
        )
        return Session(cfg, 1, spec, out_dir="unused")

    def test_settled_state_returns_to_lane_keep(self, cfg):
        from driveintent.domain import VehicleState

        s = self.make_session(cfg)
        s.mode = ModeLabel.LANE_CHANGE
        s.lc_target_center = 3.5
        s.ego = VehicleState(px=0, py=3.46, vx=16.5, vy=0.01, theta=0.001)
        s._auto_return()
        assert s.mode is ModeLabel.LANE_KEEP
        assert s.lc_target_center is None

    def test_offset_or_turned_states_keep_changing(self, cfg):
        from driveintent.domain import VehicleState

        s = self.make_session(cfg)
        s.mode = ModeLabel.LANE_CHANGE
        s.lc_target_center = 3.5
        s.ego = VehicleState(px=0, py=3.0, vx=16.5, vy=1.0, theta=0.06)
        s._auto_return()
        assert s.mode is ModeLabel.LANE_CHANGE
        s.ego = VehicleState(px=0, py=3.49, vx=16.5, vy=0.5, theta=0.05)
        s._auto_return()
        assert s.mode is ModeLabel.LANE_CHANGE


class TestHeadlessCheck:
    def test_exit_zero_and_trace_written(self, cfg, tmp_path, monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        assert headless_check(cfg, 42) == 0
        out = capsys.readouterr().out
        assert "headless check ok" in out
        traces = list((tmp_path / "runs" / "serve-check" / "traces").glob("*.jsonl"))
        assert len(traces) == 1
        trace = read_trace(str(traces[0]))
        assert trace.driver_id == "healthcheck"
        assert [e.sigma for e in trace.mode_events] == ["sigma1", "sigma2"]
