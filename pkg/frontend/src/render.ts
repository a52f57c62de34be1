/**
 * Top-down 2D canvas renderer: road band, lane divider, vehicles, and the
 * camera that follows the ego. World x (travel direction) maps to screen x;
 * world +y (toward the left lane) maps to screen UP.
 */

import { InterpolatedFrame } from "./interpolate.js";
import { GeometryInfo, VehiclePose } from "./protocol.js";

const ROAD_COLOR = "#2b2e33";
const SHOULDER_COLOR = "#3d424a";
const EDGE_LINE = "#c9cdd4";
const DIVIDER = "#e8c34a";
const EGO_COLOR = "#4da3ff";
const EGO_PREPARE = "#ffb347";
const EGO_CHANGE = "#ff6961";
const OTHER_COLOR = "#9aa3ad";

const PX_PER_M = 9; // zoom: screen pixels per world meter

export function modeColor(mode: number): string {
  return mode === 2 ? EGO_CHANGE : mode === 1 ? EGO_PREPARE : EGO_COLOR;
}

export function drawFrame(
  ctx: CanvasRenderingContext2D,
  frame: InterpolatedFrame,
  geometry: GeometryInfo,
  mode: number,
  cameraOffsetX: number,
): void {
  const { width, height } = ctx.canvas;
  ctx.fillStyle = SHOULDER_COLOR;
  ctx.fillRect(0, 0, width, height);

  const egoX = frame.ego[0];
  const midY = height / 2;
  const laneW = geometry.lane_width * PX_PER_M;
  const rightCenterWorld = geometry.right_center_y;
  const dividerWorld = rightCenterWorld + geometry.lane_width / 2;

  // world -> screen
  const sx = (wx: number) => (wx - egoX + cameraOffsetX) * PX_PER_M;
  const sy = (wy: number) => midY - (wy - dividerWorld) * PX_PER_M;

  // road band spans both lanes, centered on the divider
  ctx.fillStyle = ROAD_COLOR;
  ctx.fillRect(0, sy(dividerWorld + geometry.lane_width), width, 2 * laneW);

  // solid edges
  ctx.strokeStyle = EDGE_LINE;
  ctx.lineWidth = 2;
  for (const edge of [dividerWorld + geometry.lane_width, dividerWorld - geometry.lane_width]) {
    ctx.beginPath();
    ctx.moveTo(0, sy(edge));
    ctx.lineTo(width, sy(edge));
    ctx.stroke();
  }

  // dashed divider, scrolling with the world
  ctx.strokeStyle = DIVIDER;
  ctx.lineWidth = 2;
  ctx.setLineDash([3 * PX_PER_M, 2 * PX_PER_M]);
  ctx.lineDashOffset = (egoX % 5) * PX_PER_M;
  ctx.beginPath();
  ctx.moveTo(0, sy(dividerWorld));
  ctx.lineTo(width, sy(dividerWorld));
  ctx.stroke();
  ctx.setLineDash([]);

  // distance pips every 10 m on the near shoulder
  ctx.fillStyle = "#565d66";
  const firstPip = Math.floor((egoX - cameraOffsetX) / 10) * 10;
  for (let m = firstPip; m < egoX - cameraOffsetX + width / PX_PER_M; m += 10) {
    ctx.fillRect(sx(m), sy(dividerWorld - geometry.lane_width) + 6, 2, 8);
  }

  for (const pose of frame.others) {
    drawVehicle(ctx, pose, geometry, OTHER_COLOR, sx, sy);
  }
  drawVehicle(ctx, frame.ego, geometry, modeColor(mode), sx, sy);
}

function drawVehicle(
  ctx: CanvasRenderingContext2D,
  pose: VehiclePose,
  geometry: GeometryInfo,
  color: string,
  sx: (wx: number) => number,
  sy: (wy: number) => number,
): void {
  const [px, py, , , theta] = pose;
  const L = geometry.vehicle_length * PX_PER_M;
  const W = geometry.vehicle_width * PX_PER_M;
  ctx.save();
  ctx.translate(sx(px), sy(py));
  ctx.rotate(-theta); // +theta = toward +y = up on screen
  ctx.fillStyle = color;
  ctx.beginPath();
  ctx.roundRect(-L / 2, -W / 2, L, W, 3);
  ctx.fill();
  // windshield hints at the travel direction
  ctx.fillStyle = "rgba(20, 22, 26, 0.55)";
  ctx.fillRect(L * 0.12, -W / 2 + 2, L * 0.18, W - 4);
  ctx.restore();
}
