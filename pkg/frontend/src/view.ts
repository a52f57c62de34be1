/**
 * ViewState: everything the render loop reads, assembled from server
 * messages and input state. No physics here — only data the server sent,
 * plus the camera follow offset and HUD strings derived from it.
 */

import { ControlSample } from "./input.js";
import {
  HandshakeAck,
  MODE_NAMES,
  SessionSummary,
  TickMessage,
} from "./protocol.js";

export type Screen =
  | "connect" // address form, not yet connected
  | "connecting"
  | "live"
  | "ended" // session_end received, summary shown
  | "error" // blocking error (version mismatch, bad scenario)
  | "disconnected"; // transport lost mid-session, reconnect prompt

export interface HudFields {
  speed: number; // ego speed [m/s]
  inSpeedBand: boolean;
  speedBand: [number, number];
  modeName: string;
  scenarioId: string;
  episodeId: string;
  time: number;
  duration: number;
}

export interface ViewState {
  screen: Screen;
  ack: HandshakeAck | null;
  prevTick: TickMessage | null;
  tick: TickMessage | null; // latest tick; render interpolates prev->tick
  tickReceivedAt: number | null; // performance.now() ms when `tick` arrived
  cameraOffsetX: number; // ego is drawn this many meters from the left edge
  control: ControlSample; // latest sampled input, for the HUD
  summary: SessionSummary | null;
  errorText: string | null;
}

export function initialViewState(): ViewState {
  return {
    screen: "connect",
    ack: null,
    prevTick: null,
    tick: null,
    tickReceivedAt: null,
    cameraOffsetX: 30,
    control: { accel: 0, steer_rate: 0 },
    summary: null,
    errorText: null,
  };
}

export function pushTick(view: ViewState, tick: TickMessage, nowMs: number): void {
  view.prevTick = view.tick ?? tick;
  view.tick = tick;
  view.tickReceivedAt = nowMs;
}

export function hudFields(view: ViewState): HudFields | null {
  const { tick, ack } = view;
  if (tick === null || ack === null) return null;
  const speed = Math.hypot(tick.ego[2], tick.ego[3]);
  return {
    speed,
    inSpeedBand: tick.in_speed_band,
    speedBand: tick.speed_band,
    modeName: MODE_NAMES[tick.mode],
    scenarioId: ack.scenario_id,
    episodeId: ack.episode_id,
    time: tick.time,
    duration: ack.duration,
  };
}
