/**
 * Keyboard (and optional gamepad) state -> control values and edge-triggered
 * label events.
 *
 * Held driving keys produce a continuous normalized control; label keys are
 * strictly edge-triggered: one event per physical press, no matter how long
 * the key is held or how fast the OS auto-repeats. The Prepare key toggles
 * — whether it emits PrepareOn or PrepareOff depends on the mode most
 * recently reported by the server, never on local state, so the client can
 * not drift out of sync with the recording.
 *
 * DOM-free by design: the app layer feeds keydown/keyup names in, tests feed
 * them directly.
 */

import { LabelEventKind, ModeCode } from "./protocol.js";

const ACCEL_KEYS = ["arrowup", "w"];
const BRAKE_KEYS = ["arrowdown", "s"];
const LEFT_KEYS = ["arrowleft", "a"]; // toward the left lane (+y)
const RIGHT_KEYS = ["arrowright", "d"];
const PREPARE_KEYS = ["p"]; // button: Prepare toggle
const LANE_CHANGE_KEYS = ["enter", "l"]; // paddle: commit the change

const DRIVING_KEYS = new Set([...ACCEL_KEYS, ...BRAKE_KEYS, ...LEFT_KEYS, ...RIGHT_KEYS]);
const LABEL_KEYS = new Set([...PREPARE_KEYS, ...LANE_CHANGE_KEYS]);

export interface ControlSample {
  accel: number; // [-1, 1]
  steer_rate: number; // [-1, 1]
}

export class InputTracker {
  private held = new Set<string>();
  private pendingLabels: LabelEventKind[] = [];

  /** True when the key name belongs to this tracker (the app may then
   * preventDefault so the page does not scroll). */
  handlesKey(key: string): boolean {
    const k = key.toLowerCase();
    return DRIVING_KEYS.has(k) || LABEL_KEYS.has(k);
  }

  /**
   * Register a key press. `serverMode` is the mode from the latest Tick;
   * it decides the direction of the Prepare toggle.
   */
  keyDown(key: string, serverMode: ModeCode): void {
    const k = key.toLowerCase();
    if (this.held.has(k)) return; // OS auto-repeat: not a new press
    this.held.add(k);
    if (PREPARE_KEYS.includes(k)) {
      this.pendingLabels.push(serverMode === 0 ? "PrepareOn" : "PrepareOff");
    } else if (LANE_CHANGE_KEYS.includes(k)) {
      this.pendingLabels.push("ExecuteLaneChange");
    }
  }

  keyUp(key: string): void {
    this.held.delete(key.toLowerCase());
  }

  /** Drop all held state (window blur, reconnect). */
  reset(): void {
    this.held.clear();
    this.pendingLabels.length = 0;
  }

  /** Current control values from held keys; zeros when nothing is held. */
  control(): ControlSample {
    const axis = (pos: string[], neg: string[]) => {
      let v = 0;
      if (pos.some((k) => this.held.has(k))) v += 1;
      if (neg.some((k) => this.held.has(k))) v -= 1;
      return v;
    };
    return {
      accel: axis(ACCEL_KEYS, BRAKE_KEYS),
      steer_rate: axis(LEFT_KEYS, RIGHT_KEYS),
    };
  }

  /** Take (and clear) the label events accumulated since the last call. */
  takeLabels(): LabelEventKind[] {
    const out = this.pendingLabels;
    this.pendingLabels = [];
    return out;
  }

  /**
   * Merge one gamepad sample, if any pad is connected: left stick X steers,
   * right trigger accelerates, left trigger brakes. Keyboard still wins
   * when held (sums are clamped).
   */
  withGamepad(control: ControlSample, pads: (Gamepad | null)[]): ControlSample {
    const pad = pads.find((p) => p !== null && p.connected);
    if (!pad) return control;
    const stickX = pad.axes[0] ?? 0;
    const throttle = pad.buttons[7]?.value ?? 0;
    const brake = pad.buttons[6]?.value ?? 0;
    const clamp = (v: number) => Math.max(-1, Math.min(1, v));
    const dead = (v: number) => (Math.abs(v) < 0.15 ? 0 : v);
    return {
      accel: clamp(control.accel + throttle - brake),
      // stick right = toward the right lane = negative steer
      steer_rate: clamp(control.steer_rate - dead(stickX)),
    };
  }
}
