/**
 * Browser entry point: screen management, network wiring, input loops.
 *
 * Loop structure (single-threaded, event-driven):
 *  - network callbacks update ViewState;
 *  - a requestAnimationFrame loop renders ViewState with interpolation;
 *  - a 50 ms interval (20 Hz <= the 30 Hz budget) sends the current control
 *    sample — zeros included, as the idle heartbeat;
 *  - label keys send immediately on the key edge.
 */

import { InputTracker } from "./input.js";
import { interpolateTicks } from "./interpolate.js";
import { SessionClient } from "./net.js";
import { MODE_NAMES, SessionSummary } from "./protocol.js";
import { drawFrame } from "./render.js";
import { hudFields, initialViewState, pushTick, ViewState } from "./view.js";

const CONTROL_INTERVAL_MS = 50;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

const view: ViewState = initialViewState();
const tracker = new InputTracker();
let client: SessionClient | null = null;
let controlTimer: number | null = null;
let lastParams: { url: string; scenario: string; driver: string } | null = null;

// -- screens ----------------------------------------------------------------

const screens = {
  connect: el<HTMLDivElement>("screen-connect"),
  live: el<HTMLDivElement>("screen-live"),
  ended: el<HTMLDivElement>("screen-ended"),
  error: el<HTMLDivElement>("screen-error"),
  disconnected: el<HTMLDivElement>("screen-disconnected"),
};

function showScreen(): void {
  const mapping: Record<string, HTMLDivElement> = {
    connect: screens.connect,
    connecting: screens.connect,
    live: screens.live,
    ended: screens.ended,
    error: screens.error,
    disconnected: screens.disconnected,
  };
  for (const div of Object.values(screens)) div.classList.add("hidden");
  mapping[view.screen]?.classList.remove("hidden");
  el<HTMLButtonElement>("connect-btn").disabled = view.screen === "connecting";
}

// -- connection lifecycle -----------------------------------------------------

function connect(url: string, scenario: string, driver: string): void {
  lastParams = { url, scenario, driver };
  view.screen = "connecting";
  view.errorText = null;
  view.summary = null;
  view.ack = null;
  view.prevTick = null;
  view.tick = null;
  tracker.reset();
  showScreen();

  client = new SessionClient({
    onAck: (ack) => {
      view.ack = ack;
      view.screen = "live";
      showScreen();
      startControlLoop();
    },
    onMessage: (msg) => {
      if (msg.kind === "tick") {
        pushTick(view, msg, performance.now());
      } else if (msg.kind === "session_end") {
        view.summary = msg.summary;
        view.screen = "ended";
        stopControlLoop();
        renderSummary(msg.trace_path, msg.summary);
        showScreen();
      } else if (msg.kind === "error") {
        view.errorText = `${msg.code}: ${msg.text}`;
        view.screen = "error";
        stopControlLoop();
        el("error-text").textContent = view.errorText;
        showScreen();
      }
    },
    onClose: () => {
      stopControlLoop();
      if (view.screen === "live" || view.screen === "connecting") {
        view.screen = view.screen === "connecting" ? "error" : "disconnected";
        if (view.screen === "error") {
          el("error-text").textContent = "could not reach the session service";
        }
        showScreen();
      }
    },
    onProtocolError: (err) => {
      view.errorText = `protocol error: ${err.message}`;
      view.screen = "error";
      el("error-text").textContent = view.errorText;
      showScreen();
    },
  });
  client.connect(url, {
    scenarioRequest: scenario || undefined,
    driverId: driver || undefined,
  });
}

function startControlLoop(): void {
  stopControlLoop();
  controlTimer = window.setInterval(() => {
    if (client === null || view.screen !== "live") return;
    const pads = typeof navigator.getGamepads === "function" ? navigator.getGamepads() : [];
    const control = tracker.withGamepad(tracker.control(), Array.from(pads));
    view.control = control;
    client.sendControl({ ...control, client_time: performance.now() / 1000 });
  }, CONTROL_INTERVAL_MS);
}

function stopControlLoop(): void {
  if (controlTimer !== null) {
    window.clearInterval(controlTimer);
    controlTimer = null;
  }
}

// -- input ------------------------------------------------------------------

window.addEventListener("keydown", (ev) => {
  if (view.screen !== "live" || !tracker.handlesKey(ev.key)) return;
  ev.preventDefault();
  const mode = view.tick?.mode ?? 0;
  tracker.keyDown(ev.key, mode);
  for (const label of tracker.takeLabels()) {
    client?.sendLabel(label, performance.now() / 1000);
  }
});
window.addEventListener("keyup", (ev) => {
  if (tracker.handlesKey(ev.key)) tracker.keyUp(ev.key);
});
window.addEventListener("blur", () => tracker.reset());

// -- render loop --------------------------------------------------------------

const canvas = el<HTMLCanvasElement>("road-canvas");
const ctx = canvas.getContext("2d");
if (ctx === null) throw new Error("2d canvas unsupported");

function renderLoop(): void {
  requestAnimationFrame(renderLoop);
  if (view.screen !== "live" || view.tick === null || view.prevTick === null) return;
  const interval = view.tick.time - view.prevTick.time;
  const sinceMs = performance.now() - (view.tickReceivedAt ?? 0);
  // render clock: latest tick time plus wall time since it arrived, capped
  // by the interpolation window (never extrapolate past the latest tick)
  const renderTime = Math.min(
    view.prevTick.time + (interval > 0 ? sinceMs / 1000 : 0),
    view.tick.time,
  );
  const frame = interpolateTicks(view.prevTick, view.tick, renderTime);
  drawFrame(ctx!, frame, view.tick.geometry, view.tick.mode, view.cameraOffsetX);
  renderHud();
}

function renderHud(): void {
  const hud = hudFields(view);
  if (hud === null) return;
  el("hud-speed").textContent = hud.speed.toFixed(1);
  const band = el("hud-band");
  band.textContent = hud.inSpeedBand
    ? `in band ${hud.speedBand[0]}-${hud.speedBand[1]} m/s`
    : `OUT OF BAND (${hud.speedBand[0]}-${hud.speedBand[1]} m/s)`;
  band.className = hud.inSpeedBand ? "band-ok" : "band-out";
  const modeNode = el("hud-mode");
  modeNode.textContent = hud.modeName;
  modeNode.className = `mode-${hud.modeName.toLowerCase()}`;
  el("hud-clock").textContent = `${hud.time.toFixed(1)} / ${hud.duration.toFixed(0)} s`;
  el("hud-scenario").textContent = `${hud.scenarioId} · ${hud.episodeId}`;
}

function renderSummary(tracePath: string, s: SessionSummary): void {
  el("summary-body").innerHTML = "";
  const rows: [string, string][] = [
    ["lane changes completed", String(s.lane_changes)],
    ["labels emitted", String(s.labels_received)],
    ["mode events", String(s.mode_events)],
    ["controls received", String(s.controls_received)],
    ["ticks recorded", String(s.ticks)],
    ["collided", s.collided ? "yes" : "no"],
    ["trace written to", tracePath],
  ];
  for (const [k, v] of rows) {
    const tr = document.createElement("tr");
    const td1 = document.createElement("td");
    const td2 = document.createElement("td");
    td1.textContent = k;
    td2.textContent = v;
    tr.append(td1, td2);
    el("summary-body").appendChild(tr);
  }
  const log = s.label_log
    .map(([t, kind, ct]) => `${t.toFixed(2)}s ${kind} (client ${ct ?? "-"})`)
    .join("\n");
  el("summary-labels").textContent = log || "(no labels)";
}

// -- wiring -------------------------------------------------------------------

el<HTMLFormElement>("connect-form").addEventListener("submit", (ev) => {
  ev.preventDefault();
  connect(
    el<HTMLInputElement>("server-url").value.trim(),
    el<HTMLInputElement>("scenario-id").value.trim(),
    el<HTMLInputElement>("driver-id").value.trim(),
  );
});
el<HTMLButtonElement>("reconnect-btn").addEventListener("click", () => {
  if (lastParams !== null) connect(lastParams.url, lastParams.scenario, lastParams.driver);
});
el<HTMLButtonElement>("again-btn").addEventListener("click", () => {
  if (lastParams !== null) connect(lastParams.url, lastParams.scenario, lastParams.driver);
});
el<HTMLButtonElement>("error-back-btn").addEventListener("click", () => {
  view.screen = "connect";
  showScreen();
});

// mode legend
el("legend-modes").textContent = MODE_NAMES.join(" · ");

showScreen();
renderLoop();
