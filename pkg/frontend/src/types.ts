/** Wire types for the service JSON API. */

export interface Activity {
  id: number;
  name: string;
  origin: string;
}

export interface JobInfo {
  job_id: number;
  mode: string;
  label: string;
  state: "running" | "done" | "failed";
  phase: string;
  epoch: number;
  loss: number | null;
  error: string | null;
}

export interface Status {
  model_version: number;
  activities: Activity[];
  job: JobInfo | null;
  bundle_bytes: number;
  uptime_s: number;
  latency_ms: { median: number | null; p99: number | null };
  recording: boolean;
  pending_labels: string[];
}

export interface PredictionEntry {
  t: number;
  label_name: string;
  score: number;
  margin: number;
  uncertain: boolean;
  model_version: number;
  latency_ms: number;
}

export interface ForgettingReport {
  new_class: string;
  new_class_accuracy: number;
  before: Record<string, number>;
  after: Record<string, number>;
  drops: Record<string, number>;
  max_drop: number;
}

export interface FramePayload {
  timestamp_us: number;
  channels: number[];
}
