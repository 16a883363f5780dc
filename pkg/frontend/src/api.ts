/**
 * Typed client for the calibwiz guidance service. All calibration math lives
 * on the server; this module only shapes requests and decodes responses.
 */

export interface PoseDoc {
  t: [number, number, number];
  angles_deg: [number, number, number];
}

export interface TargetDoc {
  rows: number;
  cols: number;
  spacing: number;
}

export interface SessionConfig {
  model_kind?: string;
  target: TargetDoc;
  image_size?: [number, number];
  noise_sigma?: number;
  planner?: { method?: string; budget?: number; seed?: number };
  ground_truth?: {
    model_kind: string;
    f: number;
    u: number;
    v: number;
    k1?: number;
    k2?: number;
  };
  proximity_threshold?: number;
}

export interface Corner {
  j: number;
  x: number;
  y: number;
}

export interface Proximity {
  mean_corner_distance: number;
  within_threshold: boolean;
}

export interface CapturePayload {
  corners: Corner[];
  proximity: Proximity | null;
}

export interface CalibrationSummary {
  status: "collecting" | "calibrated";
  image_count: number;
  history: number[];
  theta?: Record<string, number | string>;
  rms?: number;
  trace_sigma?: number;
  sigma_rank?: number;
}

export interface NextPoseSuggestion {
  pose: PoseDoc;
  objective: number;
  evaluations: number;
  suggested_corners: [number, number][];
}

export interface UncertaintyRaster {
  width: number;
  height: number;
  statKind: "trace" | "max_eigenvalue" | "determinant";
  /** Row-major float values; negative values mark invalid pixels. */
  values: Float32Array;
}

const STAT_KINDS = ["trace", "max_eigenvalue", "determinant"] as const;
const SENTINEL = -1.0;

export function isValidPixel(value: number): boolean {
  return value !== SENTINEL;
}

/** Decode the raw-float uncertainty sidecar (16-byte header + f32 grid). */
export function parseSidecar(buffer: ArrayBuffer): UncertaintyRaster {
  const view = new DataView(buffer);
  const magic = String.fromCharCode(
    view.getUint8(0), view.getUint8(1), view.getUint8(2), view.getUint8(3));
  if (magic !== "UMAP") {
    throw new Error(`bad sidecar magic: ${magic}`);
  }
  const width = view.getUint32(4, true);
  const height = view.getUint32(8, true);
  const statId = view.getUint32(12, true);
  const statKind = STAT_KINDS[statId];
  if (statKind === undefined) {
    throw new Error(`unknown stat id ${statId}`);
  }
  const expected = 16 + 4 * width * height;
  if (buffer.byteLength < expected) {
    throw new Error(`sidecar truncated: ${buffer.byteLength} < ${expected}`);
  }
  const values = new Float32Array(width * height);
  for (let i = 0; i < values.length; i++) {
    values[i] = view.getFloat32(16 + 4 * i, true);
  }
  return { width, height, statKind, values };
}

export class ServiceError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

type FetchFn = typeof fetch;

export class GuidanceClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchFn = fetch,
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!response.ok) {
      let detail = `${response.status}`;
      try {
        const body = await response.json();
        detail = typeof body.detail === "string"
          ? body.detail : JSON.stringify(body);
      } catch {
        // non-JSON error body: keep the status text
      }
      throw new ServiceError(response.status, detail);
    }
    return response;
  }

  private async postJson(path: string, payload: unknown): Promise<Response> {
    return this.request(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  async createSession(config: SessionConfig): Promise<string> {
    const response = await this.postJson("/sessions", config);
    return (await response.json()).id as string;
  }

  async virtualCapture(id: string, pose: PoseDoc): Promise<CapturePayload> {
    const response = await this.postJson(
      `/sessions/${id}/virtual-capture`, pose);
    return await response.json();
  }

  async submitObservation(
    id: string, corners: Corner[],
  ): Promise<CalibrationSummary> {
    const response = await this.postJson(
      `/sessions/${id}/observations`, { corners });
    return await response.json();
  }

  async calibration(id: string): Promise<CalibrationSummary> {
    const response = await this.request(`/sessions/${id}/calibration`);
    return await response.json();
  }

  async nextPose(id: string, weighted = false): Promise<NextPoseSuggestion> {
    const response = await this.request(
      `/sessions/${id}/next-pose?weighted=${weighted}`);
    return await response.json();
  }

  async uncertaintyMap(id: string, stat = "trace"): Promise<UncertaintyRaster> {
    const response = await this.request(
      `/sessions/${id}/uncertainty-map?stat=${stat}`);
    return parseSidecar(await response.arrayBuffer());
  }
}
