/**
 * Scripted headless client: drives one lockstep session from a fixed input
 * script, with no rendering and no timers. This is the replay harness — the
 * same script against the same server configuration and seed must always
 * yield the same recorded trace, byte for byte, which the test suite checks
 * against a golden recording.
 *
 * Runs both in the browser and under node (inject a socket factory).
 */

import { SocketFactory, SocketLike } from "./net.js";
import {
  ControlPayload,
  HandshakeAck,
  ErrorMessage,
  LabelPayload,
  PROTOCOL_VERSION,
  SessionEndMessage,
} from "./protocol.js";

/** One scripted input row: [wire step index, control or null, labels]. */
export type ScriptRow = [number, ControlPayload | null, LabelPayload[]];

export interface ReplayResult {
  handshake: HandshakeAck | ErrorMessage | Record<string, unknown>;
  end: SessionEndMessage | null;
  ticks: number;
}

export interface ReplayOptions {
  scenarioRequest?: string | null;
  driverId?: string;
  protocolVersion?: number;
  socketFactory?: SocketFactory;
}

const defaultFactory: SocketFactory = (url) =>
  new (globalThis as { WebSocket: new (u: string) => SocketLike }).WebSocket(url);

export function runScriptedClient(
  uri: string,
  script: ScriptRow[],
  opts: ReplayOptions = {},
): Promise<ReplayResult> {
  const byStep = new Map<number, [ControlPayload | null, LabelPayload[]]>();
  for (const [step, control, labels] of script) byStep.set(step, [control, labels]);

  const factory = opts.socketFactory ?? defaultFactory;

  return new Promise<ReplayResult>((resolve, reject) => {
    const socket = factory(uri);
    let handshake: ReplayResult["handshake"] | null = null;
    let end: SessionEndMessage | null = null;
    let step = 0;
    let ticks = 0;
    let settled = false;

    const finish = (result: ReplayResult) => {
      if (settled) return;
      settled = true;
      resolve(result);
      socket.onclose = null;
      socket.close();
    };

    socket.onopen = () => {
      socket.send(
        JSON.stringify({
          kind: "handshake",
          protocol_version: opts.protocolVersion ?? PROTOCOL_VERSION,
          scenario_request: opts.scenarioRequest ?? null,
          driver_id: opts.driverId ?? "scripted",
          lockstep: true,
        }),
      );
    };

    socket.onmessage = (ev) => {
      const msg = JSON.parse(String(ev.data)) as Record<string, unknown>;
      if (handshake === null) {
        handshake = msg as ReplayResult["handshake"];
        if (msg.kind !== "handshake_ack") {
          finish({ handshake, end: null, ticks: 0 });
        }
        return;
      }
      if (msg.kind === "session_end") {
        end = msg as unknown as SessionEndMessage;
        finish({ handshake, end, ticks });
        return;
      }
      if (msg.kind !== "tick") return; // stray errors: keep stepping
      ticks += 1;
      const entry = byStep.get(step) ?? [null, []];
      socket.send(
        JSON.stringify({ kind: "step_ack", control: entry[0], labels: entry[1] }),
      );
      step += 1;
    };

    socket.onclose = () => {
      if (!settled && handshake !== null) {
        finish({ handshake, end, ticks });
      } else if (!settled) {
        reject(new Error("connection closed before handshake reply"));
      }
    };
    socket.onerror = () => {
      if (!settled && handshake === null) {
        reject(new Error("connection failed"));
        settled = true;
      }
    };
  });
}
