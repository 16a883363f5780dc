/**
 * Client-side view state: the steered virtual pose, the latest service
 * responses, and a sequence gate that discards stale in-flight replies.
 * Nothing here re-derives calibration math.
 */

import type {
  CalibrationSummary,
  CapturePayload,
  NextPoseSuggestion,
  PoseDoc,
  UncertaintyRaster,
} from "./api.js";

export const TRANSLATE_STEP = 0.5; // target-plane units per key press
export const ROTATE_STEP_DEG = 2.0;

export type SteerAction =
  | "left" | "right" | "up" | "down" | "forward" | "backward"
  | "pitch+" | "pitch-" | "yaw+" | "yaw-" | "roll+" | "roll-";

export interface ViewState {
  pose: PoseDoc;
  suggestion: NextPoseSuggestion | null;
  preview: CapturePayload | null;
  summary: CalibrationSummary | null;
  raster: UncertaintyRaster | null;
  error: string | null;
}

export function initialViewState(pose: PoseDoc): ViewState {
  return {
    pose,
    suggestion: null,
    preview: null,
    summary: null,
    raster: null,
    error: null,
  };
}

function wrapDeg(angle: number): number {
  const wrapped = ((angle + 180) % 360 + 360) % 360 - 180;
  return wrapped === -180 ? 180 : wrapped;
}

/** Apply one bounded steering increment; returns a new pose. */
export function steer(pose: PoseDoc, action: SteerAction): PoseDoc {
  const t: [number, number, number] = [...pose.t];
  const angles: [number, number, number] = [...pose.angles_deg];
  switch (action) {
    case "left": t[0] -= TRANSLATE_STEP; break;
    case "right": t[0] += TRANSLATE_STEP; break;
    case "up": t[1] -= TRANSLATE_STEP; break;
    case "down": t[1] += TRANSLATE_STEP; break;
    case "forward": t[2] -= TRANSLATE_STEP; break;
    case "backward": t[2] += TRANSLATE_STEP; break;
    case "pitch+": angles[0] = wrapDeg(angles[0] + ROTATE_STEP_DEG); break;
    case "pitch-": angles[0] = wrapDeg(angles[0] - ROTATE_STEP_DEG); break;
    case "yaw+": angles[1] = wrapDeg(angles[1] + ROTATE_STEP_DEG); break;
    case "yaw-": angles[1] = wrapDeg(angles[1] - ROTATE_STEP_DEG); break;
    case "roll+": angles[2] = wrapDeg(angles[2] + ROTATE_STEP_DEG); break;
    case "roll-": angles[2] = wrapDeg(angles[2] - ROTATE_STEP_DEG); break;
  }
  return { t, angles_deg: angles };
}

export const KEY_BINDINGS: Record<string, SteerAction> = {
  a: "left",
  d: "right",
  w: "up",
  s: "down",
  q: "forward",
  e: "backward",
  i: "pitch+",
  k: "pitch-",
  j: "yaw+",
  l: "yaw-",
  u: "roll+",
  o: "roll-",
};

/**
 * Monotone sequence gate: each request takes a ticket, and only the reply
 * holding the newest ticket for its channel is accepted. Guarantees at most
 * one applied response per channel even with overlapping requests.
 */
export class SequenceGate {
  private issued = new Map<string, number>();
  private applied = new Map<string, number>();

  begin(channel: string): number {
    const next = (this.issued.get(channel) ?? 0) + 1;
    this.issued.set(channel, next);
    return next;
  }

  accept(channel: string, ticket: number): boolean {
    if (ticket !== this.issued.get(channel)) {
      return false; // a newer request is in flight: discard this reply
    }
    if ((this.applied.get(channel) ?? 0) >= ticket) {
      return false;
    }
    this.applied.set(channel, ticket);
    return true;
  }
}

/** True when the capture button should be enabled. */
export function captureReady(state: ViewState, override = false): boolean {
  if (override) {
    return state.preview !== null;
  }
  return state.preview?.proximity?.within_threshold === true;
}
