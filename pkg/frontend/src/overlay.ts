/**
 * Rendering helpers. The geometry of every draw call is produced by pure
 * functions so tests can assert that overlays use exactly the coordinates the
 * service returned; the canvas wrappers at the bottom only execute them.
 */

import { isValidPixel, type Corner, type UncertaintyRaster } from "./api.js";

export const CURRENT_COLOR = "#2f9e44"; // steered pose corners
export const SUGGESTED_COLOR = "#e8590c"; // planner suggestion corners
export const CORNER_RADIUS = 4;

export interface CircleOp {
  x: number;
  y: number;
  radius: number;
  color: string;
}

/** One circle per corner, centered at the service-returned coordinates. */
export function cornerCircles(
  corners: readonly Corner[] | readonly [number, number][],
  color: string,
  radius: number = CORNER_RADIUS,
): CircleOp[] {
  return corners.map((c) => {
    const [x, y] = Array.isArray(c) ? c : [c.x, c.y];
    return { x, y, radius, color };
  });
}

/**
 * RGBA pixels for the uncertainty raster: low uncertainty renders dark blue,
 * high renders warm; invalid pixels are fully transparent.
 */
export function heatmapPixels(
  raster: UncertaintyRaster,
): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(4 * raster.width * raster.height);
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of raster.values) {
    if (!isValidPixel(v)) continue;
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  const span = hi > lo ? hi - lo : 1;
  for (let i = 0; i < raster.values.length; i++) {
    const v = raster.values[i]!;
    if (!isValidPixel(v)) {
      out[4 * i + 3] = 0;
      continue;
    }
    const s = (v - lo) / span;
    out[4 * i] = Math.round(255 * s);
    out[4 * i + 1] = Math.round(64 * (1 - Math.abs(2 * s - 1)));
    out[4 * i + 2] = Math.round(255 * (1 - s));
    out[4 * i + 3] = 180;
  }
  return out;
}

export interface ChartPoint {
  x: number;
  y: number;
}

/**
 * Polyline for the trace history on a log scale, mapped into a width x height
 * box (y grows downward, so smaller trace plots lower).
 */
export function traceChartPoints(
  history: readonly number[],
  width: number,
  height: number,
): ChartPoint[] {
  if (history.length === 0) {
    return [];
  }
  const logs = history.map((v) => Math.log10(Math.max(v, 1e-300)));
  const lo = Math.min(...logs);
  const hi = Math.max(...logs);
  const span = hi > lo ? hi - lo : 1;
  const dx = history.length > 1 ? width / (history.length - 1) : 0;
  return logs.map((v, i) => ({
    x: i * dx,
    y: height * (1 - (v - lo) / span),
  }));
}

// ---------------------------------------------------------------------------
// canvas execution (browser only)
// ---------------------------------------------------------------------------

export function drawCircles(
  ctx: CanvasRenderingContext2D,
  ops: readonly CircleOp[],
): void {
  for (const op of ops) {
    ctx.beginPath();
    ctx.arc(op.x, op.y, op.radius, 0, 2 * Math.PI);
    ctx.strokeStyle = op.color;
    ctx.lineWidth = 1.5;
    ctx.stroke();
  }
}

export function drawHeatmap(
  ctx: CanvasRenderingContext2D,
  raster: UncertaintyRaster,
): void {
  const pixels = heatmapPixels(raster);
  const image = new ImageData(pixels, raster.width, raster.height);
  ctx.putImageData(image, 0, 0);
}

export function drawTraceChart(
  ctx: CanvasRenderingContext2D,
  history: readonly number[],
  width: number,
  height: number,
): void {
  ctx.clearRect(0, 0, width, height);
  const points = traceChartPoints(history, width - 10, height - 10);
  if (points.length === 0) {
    return;
  }
  ctx.beginPath();
  points.forEach((p, i) => {
    if (i === 0) {
      ctx.moveTo(p.x + 5, p.y + 5);
    } else {
      ctx.lineTo(p.x + 5, p.y + 5);
    }
  });
  ctx.strokeStyle = "#1971c2";
  ctx.lineWidth = 2;
  ctx.stroke();
}
