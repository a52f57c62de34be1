/**
 * Pose interpolation between consecutive wire ticks.
 *
 * The wire runs slower than the render loop, so poses are blended for
 * smooth motion — but never extrapolated: the blend factor is clamped to
 * [0, 1], and a vehicle present in only one of the two ticks snaps to the
 * tick where it exists. Beyond one wire interval without fresh data the
 * view simply holds the last tick (no client-side physics).
 */

import { TickMessage, VehiclePose } from "./protocol.js";

export function lerp(a: number, b: number, alpha: number): number {
  return a + (b - a) * alpha;
}

export function clampAlpha(alpha: number): number {
  return Math.max(0, Math.min(1, alpha));
}

export function interpolatePose(a: VehiclePose, b: VehiclePose, alpha: number): VehiclePose {
  const t = clampAlpha(alpha);
  return [
    lerp(a[0], b[0], t),
    lerp(a[1], b[1], t),
    lerp(a[2], b[2], t),
    lerp(a[3], b[3], t),
    lerp(a[4], b[4], t),
  ];
}

export interface InterpolatedFrame {
  time: number;
  ego: VehiclePose;
  others: VehiclePose[];
}

/**
 * Blend two ticks at `renderTime` (seconds, same clock as tick.time).
 * With a single tick available, pass it as both arguments.
 */
export function interpolateTicks(
  prev: TickMessage,
  next: TickMessage,
  renderTime: number,
): InterpolatedFrame {
  const span = next.time - prev.time;
  const alpha = span > 0 ? clampAlpha((renderTime - prev.time) / span) : 1;
  const others = next.others.map((pose, i) => {
    const before = prev.others[i];
    return before !== undefined ? interpolatePose(before, pose, alpha) : pose;
  });
  return {
    time: lerp(prev.time, next.time, alpha),
    ego: interpolatePose(prev.ego, next.ego, alpha),
    others,
  };
}
