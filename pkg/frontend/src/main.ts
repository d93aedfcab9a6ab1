/** DOM wiring: a 500 ms poll drives every panel; the server is the single
 * source of truth and no state is kept across reloads. */

import * as api from "./api.js";
import {
  describeJob,
  forgettingBars,
  formatPct,
  latestPrediction,
  mapDeviceMotion,
  trainingDisabled,
  validateLabel,
} from "./logic.js";
import type { FramePayload, Status } from "./types.js";

const POLL_MS = 500;
const MOTION_FLUSH_MS = 500;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

let status: Status | null = null;
let lastForgettingVersion = 0;

async function poll(): Promise<void> {
  try {
    status = await api.getStatus();
    renderStatus(status);
    renderLive(await api.getPredictions(8));
    if (status.model_version !== lastForgettingVersion) {
      await renderForgetting();
      lastForgettingVersion = status.model_version;
    }
  } catch (err) {
    el("service-state").textContent = `service unreachable: ${err}`;
  }
}

function renderStatus(s: Status): void {
  el("service-state").textContent =
    `model v${s.model_version} | ${s.activities.length} activities | ` +
    `${(s.bundle_bytes / 1024).toFixed(0)} KiB bundle`;
  el("activities").textContent = s.activities
    .map((a) => (a.origin === "user_added" ? `${a.name}*` : a.name))
    .join(", ");
  el("job-state").textContent = describeJob(s);
  el("record-state").textContent = s.recording
    ? "recording..."
    : s.pending_labels.length > 0
      ? `pending: ${s.pending_labels.join(", ")}`
      : "not recording";
  const disabled = trainingDisabled(s);
  el<HTMLButtonElement>("train-btn").disabled = disabled;
  el<HTMLButtonElement>("record-start").disabled = s.recording || disabled;
  el<HTMLButtonElement>("record-stop").disabled = !s.recording;
  el<HTMLButtonElement>("record-discard").disabled = !s.recording;
}

function renderLive(entries: Awaited<ReturnType<typeof api.getPredictions>>) {
  const latest = latestPrediction(entries);
  const box = el("live-box");
  if (!latest) {
    box.className = "live idle";
    el("live-label").textContent = "no signal";
    el("live-detail").textContent = "stream frames or replay a fixture";
    return;
  }
  box.className = latest.uncertain ? "live uncertain" : "live confident";
  el("live-label").textContent = latest.label_name;
  el("live-detail").textContent =
    `score ${latest.score.toFixed(3)} | margin ${latest.margin.toFixed(3)}` +
    `${latest.uncertain ? " | UNCERTAIN" : ""} | model v${latest.model_version}`;
}

async function renderForgetting(): Promise<void> {
  const report = await api.getForgetting();
  const panel = el("forgetting-body");
  if (!report) {
    panel.innerHTML = `<p class="muted">no training has run yet</p>`;
    return;
  }
  const rows = forgettingBars(report)
    .map(
      (b) => `
      <div class="bar-row">
        <span class="bar-name">${b.name}</span>
        <span class="bar-track">
          <span class="bar before" style="width:${100 * b.before}%"></span>
        </span>
        <span class="bar-track">
          <span class="bar after" style="width:${100 * b.after}%"></span>
        </span>
        <span class="bar-drop">${formatPct(b.drop)} drop</span>
      </div>`,
    )
    .join("");
  panel.innerHTML = `
    <p>new class <b>${report.new_class}</b>:
       ${formatPct(report.new_class_accuracy)} accuracy,
       max drop ${formatPct(report.max_drop)}</p>
    <div class="bar-head"><span></span><span>before</span><span>after</span>
      <span></span></div>
    ${rows}`;
}

function wireRecording(): void {
  el("record-start").onclick = () => api.postRecording("start").then(poll);
  el("record-discard").onclick = () => api.postRecording("discard").then(poll);
  el("record-stop").onclick = async () => {
    const label = el<HTMLInputElement>("label-input").value;
    const mode = el<HTMLSelectElement>("train-mode").value as
      | "add_class"
      | "calibrate";
    const names = status?.activities.map((a) => a.name) ?? [];
    const problem = validateLabel(label, mode, names);
    if (problem) {
      el("record-error").textContent = problem;
      return;
    }
    el("record-error").textContent = "";
    try {
      await api.postRecording("stop", label.trim());
    } catch (err) {
      el("record-error").textContent = String(err);
    }
    await poll();
  };
}

function wireTraining(): void {
  el("train-btn").onclick = async () => {
    const label = el<HTMLInputElement>("label-input").value.trim();
    const mode = el<HTMLSelectElement>("train-mode").value as
      | "add_class"
      | "calibrate";
    try {
      await api.postTrain(mode, label);
      el("train-error").textContent = "";
    } catch (err) {
      el("train-error").textContent = String(err);
    }
    await poll();
  };
}

async function wireFixtures(): Promise<void> {
  const names = await api.listFixtures();
  const select = el<HTMLSelectElement>("fixture-select");
  if (!names || names.length === 0) {
    el("fixture-row").classList.add("hidden");
    return;
  }
  select.innerHTML = names
    .map((n) => `<option value="${n}">${n}</option>`)
    .join("");
  el("replay-btn").onclick = async () => {
    try {
      await api.replayFixture(select.value, 10.0);
      el("source-error").textContent = "";
    } catch (err) {
      el("source-error").textContent = String(err);
    }
  };
}

function wireDeviceMotion(): void {
  const btn = el<HTMLButtonElement>("motion-btn");
  if (typeof DeviceMotionEvent === "undefined") {
    btn.disabled = true;
    el("source-error").textContent =
      "devicemotion not supported here; use fixture replay";
    return;
  }
  let buffer: FramePayload[] = [];
  let timer: number | null = null;
  btn.onclick = () => {
    if (timer !== null) {
      window.removeEventListener("devicemotion", onMotion);
      window.clearInterval(timer);
      timer = null;
      btn.textContent = "start sensor stream";
      return;
    }
    window.addEventListener("devicemotion", onMotion);
    timer = window.setInterval(flush, MOTION_FLUSH_MS);
    btn.textContent = "stop sensor stream";
  };
  const onMotion = (ev: DeviceMotionEvent) => {
    const channels = mapMotionEvent(ev);
    if (channels) {
      buffer.push({
        timestamp_us: Math.round(performance.now() * 1000),
        channels,
      });
    }
  };
  const flush = async () => {
    if (buffer.length === 0) return;
    const batch = buffer;
    buffer = [];
    try {
      await api.postFrames(batch);
      el("source-error").textContent = "";
    } catch (err) {
      el("source-error").textContent = String(err);
    }
  };
}

function mapMotionEvent(ev: DeviceMotionEvent): number[] | null {
  const expected = 10; // matches the service's default channel layout
  const acc = ev.accelerationIncludingGravity;
  const rot = ev.rotationRate;
  if (!acc) return null;
  return mapDeviceMotion(acc, rot, expected);
}

wireRecording();
wireTraining();
void wireFixtures();
wireDeviceMotion();
void poll();
window.setInterval(() => void poll(), POLL_MS);
