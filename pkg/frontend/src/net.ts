/**
 * Thin connection wrapper: owns one WebSocket, parses frames, and routes
 * typed messages to handlers. Accepts an injectable socket factory so the
 * same code runs in the browser (native WebSocket) and under node tests
 * (the `ws` package implements the same surface).
 */

import {
  ClientMessage,
  ControlPayload,
  encodeClientMessage,
  HandshakeAck,
  LabelEventKind,
  parseServerMessage,
  PROTOCOL_VERSION,
  ProtocolError,
  ServerMessage,
} from "./protocol.js";

/** The subset of the WebSocket surface this client touches. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface SessionHandlers {
  onAck?: (ack: HandshakeAck) => void;
  onMessage?: (msg: ServerMessage) => void;
  /** Transport closed (any reason, including after session_end). */
  onClose?: () => void;
  /** Unparseable or malformed frame; connection is closed afterwards. */
  onProtocolError?: (err: ProtocolError) => void;
}

export interface ConnectOptions {
  scenarioRequest?: string;
  driverId?: string;
  lockstep?: boolean;
  socketFactory?: SocketFactory;
}

const defaultFactory: SocketFactory = (url) =>
  new (globalThis as { WebSocket: new (u: string) => SocketLike }).WebSocket(url);

export class SessionClient {
  private socket: SocketLike | null = null;
  private handlers: SessionHandlers;
  private acked = false;

  constructor(handlers: SessionHandlers) {
    this.handlers = handlers;
  }

  connect(url: string, opts: ConnectOptions = {}): void {
    const factory = opts.socketFactory ?? defaultFactory;
    const socket = factory(url);
    this.socket = socket;
    this.acked = false;

    socket.onopen = () => {
      this.sendRaw({
        kind: "handshake",
        protocol_version: PROTOCOL_VERSION,
        ...(opts.scenarioRequest !== undefined
          ? { scenario_request: opts.scenarioRequest }
          : {}),
        ...(opts.driverId !== undefined ? { driver_id: opts.driverId } : {}),
        ...(opts.lockstep !== undefined ? { lockstep: opts.lockstep } : {}),
      });
    };
    socket.onmessage = (ev) => {
      let msg: ServerMessage;
      try {
        msg = parseServerMessage(String(ev.data));
      } catch (err) {
        if (err instanceof ProtocolError) {
          this.handlers.onProtocolError?.(err);
          this.close();
          return;
        }
        throw err;
      }
      if (!this.acked && msg.kind === "handshake_ack") {
        this.acked = true;
        this.handlers.onAck?.(msg);
      }
      this.handlers.onMessage?.(msg);
    };
    socket.onclose = () => this.handlers.onClose?.();
    socket.onerror = () => {
      /* the close event follows and carries the user-visible state */
    };
  }

  get connected(): boolean {
    return this.socket !== null;
  }

  sendControl(control: ControlPayload): void {
    this.sendRaw({ kind: "control", ...control });
  }

  sendLabel(event: LabelEventKind, clientTime?: number): void {
    this.sendRaw({
      kind: "label",
      event,
      ...(clientTime !== undefined ? { client_time: clientTime } : {}),
    });
  }

  close(): void {
    const s = this.socket;
    this.socket = null;
    if (s !== null) {
      s.onclose = null;
      s.close();
      this.handlers.onClose?.();
    }
  }

  private sendRaw(msg: ClientMessage): void {
    this.socket?.send(encodeClientMessage(msg));
  }
}
