/**
 * Browser entry point: wires keyboard steering, 500 ms suggestion polling,
 * and the capture loop to the canvases in index.html.
 */

import { GuidanceClient, ServiceError, type PoseDoc } from "./api.js";
import {
  CORNER_RADIUS,
  CURRENT_COLOR,
  SUGGESTED_COLOR,
  cornerCircles,
  drawCircles,
  drawHeatmap,
  drawTraceChart,
} from "./overlay.js";
import {
  KEY_BINDINGS,
  SequenceGate,
  captureReady,
  initialViewState,
  steer,
  type ViewState,
} from "./state.js";

const POLL_MS = 500;
const IMAGE_SIZE: [number, number] = [640, 480];

const START_POSE: PoseDoc = {
  t: [-4.0, -2.5, 25.0],
  angles_deg: [0, 0, 0],
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function boot(): Promise<void> {
  const client = new GuidanceClient("");
  const gate = new SequenceGate();
  const state: ViewState = initialViewState(START_POSE);

  const sessionId = await client.createSession({
    model_kind: "pinhole3",
    target: { rows: 6, cols: 9, spacing: 1.0 },
    image_size: IMAGE_SIZE,
    ground_truth: { model_kind: "pinhole3", f: 800, u: 320, v: 240 },
  });

  const overlay = el<HTMLCanvasElement>("overlay").getContext("2d")!;
  const heat = el<HTMLCanvasElement>("heatmap").getContext("2d")!;
  const chart = el<HTMLCanvasElement>("trace-chart").getContext("2d")!;
  const status = el<HTMLDivElement>("status");
  const banner = el<HTMLDivElement>("error-banner");
  const captureBtn = el<HTMLButtonElement>("capture");

  function render(): void {
    overlay.clearRect(0, 0, IMAGE_SIZE[0], IMAGE_SIZE[1]);
    if (state.suggestion) {
      drawCircles(overlay, cornerCircles(
        state.suggestion.suggested_corners, SUGGESTED_COLOR, CORNER_RADIUS));
    }
    if (state.preview) {
      drawCircles(overlay, cornerCircles(
        state.preview.corners, CURRENT_COLOR, CORNER_RADIUS));
    }
    if (state.raster) {
      drawHeatmap(heat, state.raster);
    }
    if (state.summary) {
      drawTraceChart(chart, state.summary.history, 320, 120);
      const trace = state.summary.trace_sigma;
      status.textContent =
        `${state.summary.status} | images: ${state.summary.image_count}` +
        (trace !== undefined ? ` | trace(Σ): ${trace.toExponential(3)}` : "");
    }
    const proximity = state.preview?.proximity;
    captureBtn.disabled = !captureReady(state);
    captureBtn.textContent = proximity
      ? `capture (${proximity.mean_corner_distance.toFixed(1)} px away)`
      : "capture";
    banner.textContent = state.error ?? "";
    banner.style.display = state.error ? "block" : "none";
  }

  async function refreshPreview(): Promise<void> {
    const ticket = gate.begin("preview");
    try {
      const payload = await client.virtualCapture(sessionId, state.pose);
      if (gate.accept("preview", ticket)) {
        state.preview = payload;
        state.error = null;
      }
    } catch (err) {
      if (gate.accept("preview", ticket)) {
        state.preview = null;
        state.error = err instanceof ServiceError
          ? err.message : "service unreachable";
      }
    }
    render();
  }

  async function poll(): Promise<void> {
    const ticket = gate.begin("poll");
    try {
      const summary = await client.calibration(sessionId);
      if (!gate.accept("poll", ticket)) return;
      state.summary = summary;
      if (summary.status === "calibrated") {
        state.suggestion = await client.nextPose(sessionId);
        state.raster = await client.uncertaintyMap(sessionId);
      }
      state.error = null;
    } catch (err) {
      state.error = err instanceof ServiceError
        ? err.message : "service unreachable";
    }
    render();
  }

  captureBtn.addEventListener("click", async () => {
    if (!state.preview) return;
    try {
      state.summary = await client.submitObservation(
        sessionId, state.preview.corners);
      state.error = null;
      await poll(); // immediate refetch after a submission
    } catch (err) {
      state.error = err instanceof ServiceError
        ? err.message : "service unreachable";
    }
    render();
  });

  let previewTimer: ReturnType<typeof setTimeout> | null = null;
  window.addEventListener("keydown", (event) => {
    const action = KEY_BINDINGS[event.key];
    if (!action) return;
    state.pose = steer(state.pose, action);
    if (previewTimer) clearTimeout(previewTimer); // debounce preview fetches
    previewTimer = setTimeout(refreshPreview, 80);
  });

  setInterval(poll, POLL_MS);
  await refreshPreview();
  await poll();
}

boot().catch((err) => {
  const banner = document.getElementById("error-banner");
  if (banner) {
    banner.textContent = String(err);
    (banner as HTMLElement).style.display = "block";
  }
});
