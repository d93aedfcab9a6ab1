/** Pure view logic, kept DOM-free so it is unit-testable. */

import type {
  ForgettingReport,
  PredictionEntry,
  Status,
} from "./types.js";

/** Live view shows "no signal" until a prediction has arrived. */
export function latestPrediction(
  entries: PredictionEntry[],
): PredictionEntry | null {
  return entries.length > 0 ? entries[0] : null; // API is newest-first
}

/** Inline validation for the label input; null means acceptable. */
export function validateLabel(
  label: string,
  mode: "add_class" | "calibrate",
  existing: string[],
): string | null {
  const trimmed = label.trim();
  if (trimmed.length === 0) return "label is required";
  const known = existing.some(
    (n) => n.toLowerCase() === trimmed.toLowerCase(),
  );
  if (mode === "add_class" && known) {
    return `"${trimmed}" already exists; use calibrate to refresh it`;
  }
  if (mode === "calibrate" && !known) {
    return `"${trimmed}" is not a known activity`;
  }
  return null;
}

export function trainingDisabled(status: Status | null): boolean {
  return status?.job?.state === "running";
}

export interface ForgettingBar {
  name: string;
  before: number;
  after: number;
  drop: number;
}

/** One bar pair per old class; drop recomputed locally as before - after. */
export function forgettingBars(report: ForgettingReport): ForgettingBar[] {
  return Object.keys(report.before).map((name) => ({
    name,
    before: report.before[name],
    after: report.after[name],
    drop: report.before[name] - report.after[name],
  }));
}

/**
 * Map one devicemotion sample to the service's 10-channel frame layout:
 * accelerometer x/y/z, rotation rate alpha/beta/gamma standing in for the
 * gyroscope, three zero magnetometer channels (not exposed by browsers),
 * and the accelerometer magnitude. Returns null when the reading is
 * incomplete or the layout does not match the expected channel count.
 */
export function mapDeviceMotion(
  acc: { x: number | null; y: number | null; z: number | null } | null,
  rot: {
    alpha: number | null;
    beta: number | null;
    gamma: number | null;
  } | null,
  expectedChannels: number,
): number[] | null {
  if (!acc || acc.x == null || acc.y == null || acc.z == null) return null;
  const gyro = [rot?.alpha ?? 0, rot?.beta ?? 0, rot?.gamma ?? 0];
  const mag = Math.sqrt(acc.x ** 2 + acc.y ** 2 + acc.z ** 2);
  const channels = [acc.x, acc.y, acc.z, ...gyro, 0, 0, 0, mag];
  return channels.length === expectedChannels ? channels : null;
}

export function formatPct(v: number): string {
  return `${(100 * v).toFixed(1)}%`;
}

export function describeJob(status: Status): string {
  const job = status.job;
  if (!job) return "idle";
  if (job.state === "running") {
    const loss = job.loss == null ? "" : `, loss ${job.loss.toFixed(4)}`;
    return `${job.mode} "${job.label}": ${job.phase} epoch ${job.epoch}${loss}`;
  }
  if (job.state === "failed") {
    return `${job.mode} "${job.label}" failed: ${job.error ?? "unknown error"}`;
  }
  return `${job.mode} "${job.label}" done`;
}
