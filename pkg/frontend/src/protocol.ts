/**
 * Wire protocol spoken with the driveintent session service.
 *
 * Transport is JSON text frames over a WebSocket. Every message carries a
 * `kind` discriminator. The client never simulates: it renders what the
 * server sends and emits inputs; in particular the active mode shown in the
 * HUD is always the server's, never a local guess.
 */

export const PROTOCOL_VERSION = 1;

export const LABEL_KINDS = ["PrepareOn", "PrepareOff", "ExecuteLaneChange"] as const;
export type LabelEventKind = (typeof LABEL_KINDS)[number];

export const MODE_NAMES = ["LaneKeep", "Prepare", "LaneChange"] as const;
export type ModeCode = 0 | 1 | 2;

/** Vehicle pose on the wire: [px, py, vx, vy, theta]. */
export type VehiclePose = [number, number, number, number, number];

export interface GeometryInfo {
  lane_width: number;
  right_center_y: number;
  vehicle_length: number;
  vehicle_width: number;
}

// ---------------------------------------------------------------------------
// Client -> server
// ---------------------------------------------------------------------------

export interface HandshakeMessage {
  kind: "handshake";
  protocol_version: number;
  scenario_request?: string;
  driver_id?: string;
  lockstep?: boolean;
}

export interface ControlPayload {
  accel: number; // normalized [-1, 1]
  steer_rate: number; // normalized [-1, 1], positive = toward the left lane
  client_time?: number;
}

export interface ControlMessage extends ControlPayload {
  kind: "control";
}

export interface LabelPayload {
  event: LabelEventKind;
  client_time?: number;
}

export interface LabelMessage extends LabelPayload {
  kind: "label";
}

/** Lockstep reply to one tick (headless replay harness only). */
export interface StepAckMessage {
  kind: "step_ack";
  control?: ControlPayload | null;
  labels?: LabelPayload[];
}

export type ClientMessage =
  | HandshakeMessage
  | ControlMessage
  | LabelMessage
  | StepAckMessage;

// ---------------------------------------------------------------------------
// Server -> client
// ---------------------------------------------------------------------------

export interface HandshakeAck {
  kind: "handshake_ack";
  protocol_version: number;
  scenario_id: string;
  episode_id: string;
  duration: number; // episode length [s]
  tick_rate: number; // simulation rate [Hz]
  decimation: number; // wire tick every N simulation ticks
  lockstep: boolean;
  geometry: GeometryInfo;
  speed_band: [number, number]; // target ego speed range [m/s]
  n_others: number;
}

export interface TickMessage {
  kind: "tick";
  time: number;
  ego: VehiclePose;
  others: VehiclePose[];
  mode: ModeCode;
  geometry: GeometryInfo;
  speed_band: [number, number];
  in_speed_band: boolean;
}

export interface SessionSummary {
  ticks: number;
  mode_events: number;
  lane_changes: number;
  labels_received: number;
  controls_received: number;
  collided: boolean;
  /** [server_time, event kind, client_time as sent] per label received. */
  label_log: [number, string, number | null][];
}

export interface SessionEndMessage {
  kind: "session_end";
  trace_path: string;
  summary: SessionSummary;
}

export interface ErrorMessage {
  kind: "error";
  code: string;
  text: string;
}

export type ServerMessage =
  | HandshakeAck
  | TickMessage
  | SessionEndMessage
  | ErrorMessage;

// ---------------------------------------------------------------------------
// Parsing / validation
// ---------------------------------------------------------------------------

export class ProtocolError extends Error {}

function isFiniteNumber(v: unknown): v is number {
  return typeof v === "number" && Number.isFinite(v);
}

export function isVehiclePose(v: unknown): v is VehiclePose {
  return Array.isArray(v) && v.length === 5 && v.every(isFiniteNumber);
}

export function isGeometryInfo(v: unknown): v is GeometryInfo {
  if (typeof v !== "object" || v === null) return false;
  const g = v as Record<string, unknown>;
  return (
    isFiniteNumber(g.lane_width) &&
    isFiniteNumber(g.right_center_y) &&
    isFiniteNumber(g.vehicle_length) &&
    isFiniteNumber(g.vehicle_width)
  );
}

function isSpeedBand(v: unknown): v is [number, number] {
  return Array.isArray(v) && v.length === 2 && v.every(isFiniteNumber);
}

function isHandshakeAck(m: Record<string, unknown>): m is HandshakeAck & Record<string, unknown> {
  return (
    isFiniteNumber(m.protocol_version) &&
    typeof m.scenario_id === "string" &&
    typeof m.episode_id === "string" &&
    isFiniteNumber(m.duration) &&
    isFiniteNumber(m.tick_rate) &&
    isFiniteNumber(m.decimation) &&
    typeof m.lockstep === "boolean" &&
    isGeometryInfo(m.geometry) &&
    isSpeedBand(m.speed_band) &&
    isFiniteNumber(m.n_others)
  );
}

function isTick(m: Record<string, unknown>): m is TickMessage & Record<string, unknown> {
  return (
    isFiniteNumber(m.time) &&
    isVehiclePose(m.ego) &&
    Array.isArray(m.others) &&
    (m.others as unknown[]).every(isVehiclePose) &&
    (m.mode === 0 || m.mode === 1 || m.mode === 2) &&
    isGeometryInfo(m.geometry) &&
    isSpeedBand(m.speed_band) &&
    typeof m.in_speed_band === "boolean"
  );
}

function isSessionEnd(m: Record<string, unknown>): m is SessionEndMessage & Record<string, unknown> {
  if (typeof m.trace_path !== "string") return false;
  const s = m.summary;
  if (typeof s !== "object" || s === null) return false;
  const sum = s as Record<string, unknown>;
  return (
    isFiniteNumber(sum.ticks) &&
    isFiniteNumber(sum.mode_events) &&
    isFiniteNumber(sum.lane_changes) &&
    isFiniteNumber(sum.labels_received) &&
    isFiniteNumber(sum.controls_received) &&
    typeof sum.collided === "boolean" &&
    Array.isArray(sum.label_log)
  );
}

function isError(m: Record<string, unknown>): m is ErrorMessage & Record<string, unknown> {
  return typeof m.code === "string" && typeof m.text === "string";
}

/**
 * Parse one raw frame into a typed server message.
 * Throws ProtocolError on anything that is not a well-formed server message.
 */
export function parseServerMessage(raw: string): ServerMessage {
  let value: unknown;
  try {
    value = JSON.parse(raw);
  } catch {
    throw new ProtocolError("frame is not valid JSON");
  }
  if (typeof value !== "object" || value === null || Array.isArray(value)) {
    throw new ProtocolError("frame is not an object");
  }
  const m = value as Record<string, unknown>;
  switch (m.kind) {
    case "handshake_ack":
      if (isHandshakeAck(m)) return m;
      throw new ProtocolError("malformed handshake_ack");
    case "tick":
      if (isTick(m)) return m;
      throw new ProtocolError("malformed tick");
    case "session_end":
      if (isSessionEnd(m)) return m;
      throw new ProtocolError("malformed session_end");
    case "error":
      if (isError(m)) return m;
      throw new ProtocolError("malformed error message");
    default:
      throw new ProtocolError(`unknown message kind ${String(m.kind)}`);
  }
}

export function encodeClientMessage(msg: ClientMessage): string {
  return JSON.stringify(msg);
}
