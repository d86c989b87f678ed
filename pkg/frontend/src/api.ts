/**
 * Typed client for the rollout-service JSON API.
 *
 * Arrays arrive either as plain number arrays (small vectors) or packed as
 * base64 little-endian float32 with an explicit shape.
 */

export type Packed = number | number[] | { b64: string; shape: number[]; dtype: string };

export interface SessionInfo {
  api_version: number;
  session_id: string;
  t: number;
  mode: "simulated" | "external";
  seed: number;
  horizon: number;
  preset: string;
  simulator: string;
  design_dim: number;
  obs_shape: number[];
  theta_shape: number[];
  pending_design: number[] | null;
  theta?: Packed;
}

export interface ProposeResponse {
  t: number;
  design: number[];
}

export interface ObserveResponse {
  t: number;
  design: number[];
  design_source: string;
  observation: Packed;
  h_digest: string;
  summary_stats: { mean: number; std: number };
}

export interface PosteriorResponse {
  t: number;
  n: number;
  seed: number | null;
  theta_shape: number[];
  samples: Packed;
  mean: number[];
  std: number[];
}

export interface TraceStep {
  t: number;
  design: number[];
  observation: Packed;
  design_source: string;
}

export interface Trace {
  trace_version: number;
  mode: string;
  seed: number;
  horizon: number;
  theta: Packed | null;
  steps: TraceStep[];
}

export class ApiError extends Error {
  constructor(public code: string, message: string, public status: number) {
    super(message);
  }
}

/** Decode a packed array into a flat Float32Array plus its shape. */
export function decodePacked(value: Packed): { data: Float32Array; shape: number[] } {
  if (typeof value === "number") {
    return { data: Float32Array.from([value]), shape: [] };
  }
  if (Array.isArray(value)) {
    return { data: Float32Array.from(value), shape: [value.length] };
  }
  if (value.dtype !== "<f4") {
    throw new Error(`unsupported packed dtype ${value.dtype}`);
  }
  const raw = typeof atob === "function"
    ? Uint8Array.from(atob(value.b64), (c) => c.charCodeAt(0))
    : new Uint8Array(Buffer.from(value.b64, "base64"));
  return {
    data: new Float32Array(raw.buffer, raw.byteOffset, raw.byteLength / 4),
    shape: value.shape,
  };
}

async function parse<T>(response: Response): Promise<T> {
  const body = await response.json();
  if (!response.ok) {
    const err = body?.error ?? { code: "unknown", message: response.statusText };
    throw new ApiError(err.code, err.message, response.status);
  }
  return body as T;
}

export class ApiClient {
  constructor(private base: string = "") {}

  health(): Promise<{ status: string }> {
    return fetch(`${this.base}/healthz`).then((r) => parse(r));
  }

  createSession(body: { checkpoint?: string; mode?: string; seed?: number;
                        horizon?: number }): Promise<SessionInfo> {
    return fetch(`${this.base}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    }).then((r) => parse(r));
  }

  sessionInfo(sid: string): Promise<SessionInfo> {
    return fetch(`${this.base}/sessions/${sid}`).then((r) => parse(r));
  }

  propose(sid: string): Promise<ProposeResponse> {
    return fetch(`${this.base}/sessions/${sid}/propose`, { method: "POST" })
      .then((r) => parse(r));
  }

  observe(sid: string, body: { design_override?: number[]; observation?: Packed } = {}):
      Promise<ObserveResponse> {
    return fetch(`${this.base}/sessions/${sid}/observe`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    }).then((r) => parse(r));
  }

  posterior(sid: string, n: number, seed?: number): Promise<PosteriorResponse> {
    const params = new URLSearchParams({ n: String(n) });
    if (seed !== undefined) params.set("seed", String(seed));
    return fetch(`${this.base}/sessions/${sid}/posterior?${params}`)
      .then((r) => parse(r));
  }

  trace(sid: string): Promise<Trace> {
    return fetch(`${this.base}/sessions/${sid}/trace`).then((r) => parse(r));
  }
}
