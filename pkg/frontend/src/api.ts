/** Thin typed client over the service API.
 *
 * Every request is a relative path, so the console can only ever talk to
 * the origin that served it; there is no way to configure a third-party
 * endpoint.
 */

import type {
  ForgettingReport,
  FramePayload,
  PredictionEntry,
  Status,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  if (!path.startsWith("/api/")) {
    throw new Error(`refusing non-service path: ${path}`);
  }
  const resp = await fetch(path, init);
  const body = await resp.json().catch(() => ({}));
  if (!resp.ok) {
    throw new ApiError(
      resp.status,
      body.code ?? "error",
      body.message ?? resp.statusText,
    );
  }
  return body as T;
}

function post<T>(path: string, payload: unknown): Promise<T> {
  return request<T>(path, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(payload),
  });
}

export function getStatus(): Promise<Status> {
  return request<Status>("/api/status");
}

export function getPredictions(limit = 32): Promise<PredictionEntry[]> {
  return request<PredictionEntry[]>(`/api/predictions?limit=${limit}`);
}

export async function getForgetting(): Promise<ForgettingReport | null> {
  try {
    return await request<ForgettingReport>("/api/report/forgetting");
  } catch (err) {
    if (err instanceof ApiError && err.status === 404) return null;
    throw err;
  }
}

export function postRecording(
  action: "start" | "stop" | "discard",
  label?: string,
): Promise<{ recording: boolean; frames: number; pending_labels: string[] }> {
  return post("/api/recordings", label ? { action, label } : { action });
}

export function postTrain(
  mode: "add_class" | "calibrate",
  label: string,
): Promise<{ job_id: number }> {
  return post("/api/train", { mode, label });
}

export function postFrames(
  frames: FramePayload[],
): Promise<{ windows_emitted: number }> {
  return post("/api/frames", { frames });
}

export async function listFixtures(): Promise<string[] | null> {
  try {
    return await request<string[]>("/api/fixtures");
  } catch {
    return null; // service was started without a fixtures directory
  }
}

export function replayFixture(
  name: string,
  speed: number,
): Promise<{ frames: number }> {
  return post("/api/fixtures/replay", { name, speed });
}
