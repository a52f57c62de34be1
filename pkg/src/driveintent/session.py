"""Interactive labeling service: a human (or scripted client) replaces the
surrogate driver over a local WebSocket connection.

The server owns the simulation: clients only send normalized controls and
label events and render what the server streams back.  Label timestamps are
always the server's simulation time at message arrival; client_time is
logged for diagnostics only.  Two session modes:

* realtime — the loop free-runs at 60 Hz wall clock; inputs apply at the
  tick during which they arrive.
* lockstep — the server sends one Tick per wire interval and waits for the
  client's step_ack before advancing, so a scripted input sequence always
  produces a byte-identical trace.

Wire protocol v1, JSON text frames (see README for the full schema).
"""

from __future__ import annotations

import asyncio
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import websockets

from .config import AppConfig
from .dataset_io import trace_filename, write_trace
from .domain import ModeLabel, boxes_overlap, derive_rng, lane_of
from .driver import LANE_SETTLE_HEADING, LANE_SETTLE_POS
from .perception import sense
from .simulation import (
    DT,
    EARLY_TERMINATION_GAP,
    SPEED_BAND,
    ModeEvent,
    ScenarioSpec,
    TimestepRecord,
    Trace,
    _scripted_accels,
    generate_scenarios,
    step_vehicle,
)

PROTOCOL_VERSION = 1
MAX_ACCEL_CMD = 4.0  # m/s^2 at |normalized accel| = 1
MAX_STEER_CMD = 2.0  # m/s at |normalized steer_rate| = 1

LABEL_KINDS = ("PrepareOn", "PrepareOff", "ExecuteLaneChange")


class SessionError(RuntimeError):
    pass


def _geometry_dict(geometry) -> dict:
    return {
        "lane_width": geometry.lane_width,
        "right_center_y": geometry.right_center_y,
        "vehicle_length": geometry.vehicle_length,
        "vehicle_width": geometry.vehicle_width,
    }


@dataclass
class _Inputs:
    """Latest zero-order-hold control plus the pending label queue."""

    accel_norm: float = 0.0
    steer_norm: float = 0.0
    labels: list = field(default_factory=list)  # (kind, client_time)
    control_count: int = 0


class Session:
    """One connection driving one scenario; produces a standard Trace."""

    def __init__(
        self,
        cfg: AppConfig,
        seed: int,
        spec: ScenarioSpec,
        out_dir: str,
        driver_id: str = "human",
        lockstep: bool = False,
    ):
        self.cfg = cfg
        self.seed = seed
        self.spec = spec
        self.out_dir = out_dir
        self.driver_id = driver_id
        self.lockstep = lockstep
        self.inputs = _Inputs()
        self.mode = ModeLabel.LANE_KEEP
        self.lc_target_center: Optional[float] = None
        self.label_log: list = []  # [server_time, kind, client_time]
        self.records: list = []
        self.events: list = []
        self.collided = False
        self.incomplete = False
        self.episode_id = f"{driver_id}-{spec.scenario_id}-s{seed}"

    # -- label channel ----------------------------------------------------

    def _apply_labels(self, t: float, geometry) -> None:
        """Edge-triggered mode changes, timestamped with server sim time."""
        for kind, client_time in self.inputs.labels:
            self.label_log.append([t, kind, client_time])
            if kind == "PrepareOn" and self.mode is ModeLabel.LANE_KEEP:
                self.mode = ModeLabel.PREPARE
            elif kind == "PrepareOff" and self.mode is not ModeLabel.LANE_KEEP:
                self.mode = ModeLabel.LANE_KEEP
                self.lc_target_center = None
            elif kind == "ExecuteLaneChange" and self.mode is not ModeLabel.LANE_CHANGE:
                self.mode = ModeLabel.LANE_CHANGE
                source = lane_of(self.ego.py, geometry)
                self.lc_target_center = geometry.center_of(source.other)
        self.inputs.labels.clear()

    def _auto_return(self) -> None:
        """Lane-settle rule: LaneChange ends itself once settled on target."""
        if self.mode is not ModeLabel.LANE_CHANGE or self.lc_target_center is None:
            return
        if (
            abs(self.ego.py - self.lc_target_center) < LANE_SETTLE_POS
            and abs(self.ego.theta) < LANE_SETTLE_HEADING
        ):
            self.mode = ModeLabel.LANE_KEEP
            self.lc_target_center = None

    # -- message handling ---------------------------------------------------

    async def _handle_message(self, ws, raw: str) -> Optional[str]:
        """Apply one client message; returns 'ack' for lockstep step_acks."""
        try:
            msg = json.loads(raw)
            kind = msg["kind"]
        except (json.JSONDecodeError, TypeError, KeyError):
            await _send(ws, {"kind": "error", "code": "bad_message", "text": "unparseable message"})
            return None
        if kind == "control":
            return self._apply_control(msg) or None
        if kind == "label":
            if msg.get("event") not in LABEL_KINDS:
                await _send(
                    ws,
                    {
                        "kind": "error",
                        "code": "bad_label",
                        "text": f"unknown label event {msg.get('event')!r}",
                    },
                )
                return None
            self.inputs.labels.append((msg["event"], msg.get("client_time")))
            return None
        if kind == "step_ack":
            for sub in msg.get("labels", []):
                if sub.get("event") in LABEL_KINDS:
                    self.inputs.labels.append((sub["event"], sub.get("client_time")))
            if "control" in msg and msg["control"] is not None:
                self._apply_control(msg["control"])
            return "ack"
        await _send(
            ws,
            {"kind": "error", "code": "bad_kind", "text": f"unknown message kind {kind!r}"},
        )
        return None

    def _apply_control(self, msg: dict) -> None:
        try:
            accel = float(msg.get("accel", 0.0))
            steer = float(msg.get("steer_rate", 0.0))
        except (TypeError, ValueError):
            return
        if not (math.isfinite(accel) and math.isfinite(steer)):
            return
        self.inputs.accel_norm = min(max(accel, -1.0), 1.0)
        self.inputs.steer_norm = min(max(steer, -1.0), 1.0)
        self.inputs.control_count += 1

    def _tick_message(self, t: float, others: list) -> dict:
        geometry = self.cfg.geometry
        speed = self.ego.speed
        return {
            "kind": "tick",
            "time": t,
            "ego": [self.ego.px, self.ego.py, self.ego.vx, self.ego.vy, self.ego.theta],
            "others": [[s.px, s.py, s.vx, s.vy, s.theta] for s in others],
            "mode": int(self.mode),
            "geometry": _geometry_dict(geometry),
            "speed_band": list(SPEED_BAND),
            "in_speed_band": SPEED_BAND[0] <= speed <= SPEED_BAND[1],
        }

    # -- main loop ----------------------------------------------------------

    async def run(self, ws) -> str:
        cfg = self.cfg
        geometry = cfg.geometry
        spec = self.spec
        self.ego, others = spec.initial_states(geometry)
        rng_sense = derive_rng(self.seed, "sense")
        n_ticks = int(round(spec.episode_duration * 60))
        accel_sched = _scripted_accels(spec, n_ticks)
        decim = cfg.serve.decimation
        loop = asyncio.get_running_loop()
        t_start = loop.time()

        reader_task = None
        if not self.lockstep:
            reader_task = asyncio.ensure_future(self._reader(ws))
        try:
            for k in range(n_ticks + 1):
                t = k / 60.0
                wire_tick = k % decim == 0
                if wire_tick:
                    await _send(ws, self._tick_message(t, others))
                    if self.lockstep:
                        while True:
                            raw = await ws.recv()
                            if await self._handle_message(ws, raw) == "ack":
                                break
                if not self.lockstep:
                    # pace the loop to wall-clock 60 Hz
                    target = t_start + (k + 1) * DT
                    delay = target - loop.time()
                    if delay > 0:
                        await asyncio.sleep(delay)
                    if reader_task.done():
                        raise SessionError("client connection lost")

                # At most one net mode transition per tick, mirroring the
                # surrogate; the full label stream still lands in label_log.
                prev_mode = self.mode
                self._apply_labels(t, geometry)
                self._auto_return()
                event_name = None
                if self.mode is not prev_mode and k > 0:
                    ev = ModeEvent(time=t, from_mode=prev_mode, to_mode=self.mode)
                    self.events.append(ev)
                    event_name = ev.sigma
                accel = self.inputs.accel_norm * MAX_ACCEL_CMD
                lateral = self.inputs.steer_norm * MAX_STEER_CMD
                measurements = sense(self.ego, others, cfg.sensor, rng_sense)

                self.records.append(
                    TimestepRecord(
                        time=t,
                        ego=self.ego.copy(),
                        ego_controls=(accel, lateral),
                        others_true=[s.copy() for s in others],
                        others_measured=measurements,
                        mode=self.mode,
                        event=event_name,
                    )
                )

                if any(boxes_overlap(self.ego, s, geometry) for s in others):
                    self.collided = True
                    break
                if others and min(abs(s.px - self.ego.px) for s in others) > EARLY_TERMINATION_GAP:
                    break
                if k == n_ticks:
                    break
                self.ego = step_vehicle(self.ego, accel, lateral, DT)
                others = [
                    step_vehicle(s, accel_sched[j][k], 0.0, DT)
                    for j, s in enumerate(others)
                ]
        finally:
            if reader_task is not None:
                reader_task.cancel()

        trace = Trace(
            scenario_id=spec.scenario_id,
            driver_id=self.driver_id,
            episode_id=self.episode_id,
            seed=self.seed,
            config_digest=cfg.digest,
            geometry=geometry,
            n_others=len(spec.surrounding),
            records=self.records,
            mode_events=self.events,
            collided=self.collided,
            incomplete=self.incomplete,
        )
        os.makedirs(self.out_dir, exist_ok=True)
        path = os.path.join(self.out_dir, trace_filename(trace))
        write_trace(trace, path)
        summary = {
            "ticks": len(self.records),
            "mode_events": len(self.events),
            "lane_changes": sum(1 for e in self.events if e.to_mode is ModeLabel.LANE_CHANGE),
            "labels_received": len(self.label_log),
            "controls_received": self.inputs.control_count,
            "collided": self.collided,
            "label_log": self.label_log,
        }
        await _send(ws, {"kind": "session_end", "trace_path": path, "summary": summary})
        return path

    async def _reader(self, ws) -> None:
        async for raw in ws:
            await self._handle_message(ws, raw)


async def _send(ws, obj: dict) -> None:
    await ws.send(json.dumps(obj, separators=(",", ":")))


# ---------------------------------------------------------------------------
# Server
# ---------------------------------------------------------------------------


def _pick_scenario(cfg: AppConfig, seed: int, request: Optional[str]) -> ScenarioSpec:
    scenarios = generate_scenarios(cfg.grid, seed, cfg.geometry)
    wanted = request or cfg.serve.scenario
    if wanted is None:
        return min(scenarios, key=lambda s: s.scenario_id)
    for spec in scenarios:
        if spec.scenario_id == wanted:
            return spec
    raise SessionError(f"unknown scenario id: {wanted!r}")


async def _handle_connection(ws, cfg: AppConfig, seed: int, out_dir: str) -> None:
    try:
        raw = await ws.recv()
    except websockets.ConnectionClosed:
        return
    try:
        msg = json.loads(raw)
    except json.JSONDecodeError:
        msg = {}
    if msg.get("kind") != "handshake":
        await _send(ws, {"kind": "error", "code": "bad_handshake", "text": "expected handshake"})
        return
    if msg.get("protocol_version") != PROTOCOL_VERSION:
        await _send(
            ws,
            {
                "kind": "error",
                "code": "version_mismatch",
                "text": f"server speaks protocol {PROTOCOL_VERSION}",
            },
        )
        return
    try:
        spec = _pick_scenario(cfg, seed, msg.get("scenario_request"))
    except SessionError as exc:
        await _send(ws, {"kind": "error", "code": "bad_scenario", "text": str(exc)})
        return

    session = Session(
        cfg,
        seed,
        spec,
        out_dir,
        driver_id=str(msg.get("driver_id") or "human"),
        lockstep=bool(msg.get("lockstep", False)),
    )
    await _send(
        ws,
        {
            "kind": "handshake_ack",
            "protocol_version": PROTOCOL_VERSION,
            "scenario_id": spec.scenario_id,
            "episode_id": session.episode_id,
            "duration": spec.episode_duration,
            "tick_rate": 60,
            "decimation": cfg.serve.decimation,
            "lockstep": session.lockstep,
            "geometry": _geometry_dict(cfg.geometry),
            "speed_band": list(SPEED_BAND),
            "n_others": len(spec.surrounding),
        },
    )
    try:
        await session.run(ws)
    except (websockets.ConnectionClosed, SessionError):
        # connection lost mid-session: keep the partial trace, flagged
        session.incomplete = True
        trace = Trace(
            scenario_id=spec.scenario_id,
            driver_id=session.driver_id,
            episode_id=session.episode_id,
            seed=seed,
            config_digest=cfg.digest,
            geometry=cfg.geometry,
            n_others=len(spec.surrounding),
            records=session.records,
            mode_events=session.events,
            collided=session.collided,
            incomplete=True,
        )
        os.makedirs(out_dir, exist_ok=True)
        write_trace(trace, os.path.join(out_dir, trace_filename(trace)))


async def _serve(cfg: AppConfig, seed: int, port: int, out_dir: str, ready=None) -> None:
    async def handler(ws):
        await _handle_connection(ws, cfg, seed, out_dir)

    async with websockets.serve(handler, cfg.serve.host, port) as server:
        bound = server.sockets[0].getsockname()
        print(f"listening on ws://{bound[0]}:{bound[1]} (protocol v{PROTOCOL_VERSION})")
        if ready is not None:
            ready.set_result(bound[1])
        await asyncio.Future()  # serve until cancelled


def serve_forever(cfg: AppConfig, seed: int, port: Optional[int] = None) -> int:
    out_dir = os.path.join("runs", "serve", "traces")
    try:
        asyncio.run(_serve(cfg, seed, port if port is not None else cfg.serve.port, out_dir))
    except KeyboardInterrupt:
        print("interrupted, shutting down")
    return 0


# ---------------------------------------------------------------------------
# Scripted headless client (self-test and replay harness)
# ---------------------------------------------------------------------------


async def run_scripted_client(
    uri: str,
    script: list,
    scenario_request: Optional[str] = None,
    driver_id: str = "scripted",
    protocol_version: int = PROTOCOL_VERSION,
) -> dict:
    """Drive one lockstep session from an input script.

    ``script`` maps wire-step indices to inputs: a list of
    (step_index, control_or_None, labels_list) tuples, sorted by step.
    Returns {"handshake": …, "end": …, "ticks": count}.
    """
    by_step = {s[0]: (s[1], s[2]) for s in script}
    async with websockets.connect(uri, max_size=2**22) as ws:
        await _send(
            ws,
            {
                "kind": "handshake",
                "protocol_version": protocol_version,
                "scenario_request": scenario_request,
                "driver_id": driver_id,
                "lockstep": True,
            },
        )
        hs = json.loads(await ws.recv())
        if hs.get("kind") != "handshake_ack":
            return {"handshake": hs, "end": None, "ticks": 0}
        step = 0
        ticks = 0
        end = None
        while True:
            msg = json.loads(await ws.recv())
            if msg["kind"] == "session_end":
                end = msg
                break
            if msg["kind"] == "error":
                continue
            if msg["kind"] != "tick":
                continue
            ticks += 1
            control, labels = by_step.get(step, (None, []))
            await _send(
                ws,
                {
                    "kind": "step_ack",
                    "control": control,
                    "labels": labels,
                },
            )
            step += 1
        return {"handshake": hs, "end": end, "ticks": ticks}


def headless_check(cfg: AppConfig, seed: int) -> int:
    """Start a private server, run one synthetic handshake, verify, exit 0."""

    async def check() -> int:
        loop = asyncio.get_running_loop()
        ready = loop.create_future()
        out_dir = os.path.join("runs", "serve-check", "traces")
        server_task = asyncio.ensure_future(_serve(cfg, seed, 0, out_dir, ready=ready))
        port = await ready
        script = [
            (10, {"accel": 0.3, "steer_rate": 0.0, "client_time": 0.0}, []),
            (40, None, [{"event": "PrepareOn", "client_time": 1.0}]),
            (60, None, [{"event": "ExecuteLaneChange", "client_time": 2.0}]),
        ]
        try:
            result = await run_scripted_client(
                f"ws://{cfg.serve.host}:{port}", script, driver_id="healthcheck"
            )
        finally:
            server_task.cancel()
        end = result["end"]
        if not end or not os.path.exists(end["trace_path"]):
            print("headless check failed: no session_end or missing trace", file=sys.stderr)
            return 1
        print(
            f"headless check ok: {result['ticks']} wire ticks, "
            f"trace at {end['trace_path']}"
        )
        return 0

    return asyncio.run(check())
