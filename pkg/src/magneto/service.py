"""Local HTTP service for the online loop: live ingestion and inference,
recording/labeling, training jobs, and status.

Single process, loopback by default, zero outbound connections. Inference
always serves the current immutable bundle; a training job builds a new
bundle off to the side and swaps it in atomically on success.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from . import features as feat
from . import learner, ncm, tensor_nn
from .ingest import (SensorFrame, StreamWindower, TimestampRegressionError,
                     Window, parse_trace_with_header, segment)
from .learner import EdgeBundle, ForgettingReport

PREDICTION_LOG_BOUND = 256
LATENCY_WINDOW = 512


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        self.status = status
        self.code = code
        self.message = message
        super().__init__(message)


@dataclass
class TrainingJob:
    job_id: int
    mode: str
    label: str
    state: str = "running"       # running | done | failed
    phase: str = "starting"
    epoch: int = 0
    loss: float | None = None
    error: str | None = None


@dataclass
class ServiceState:
    bundle: EdgeBundle
    prototypes: list = field(default_factory=list)
    windower: StreamWindower | None = None
    recording_active: bool = False
    recording_frames: list[SensorFrame] = field(default_factory=list)
    pending: dict[str, list[SensorFrame]] = field(default_factory=dict)
    job: TrainingJob | None = None
    last_forgetting: ForgettingReport | None = None
    predictions: deque = field(default_factory=lambda: deque(maxlen=PREDICTION_LOG_BOUND))
    latencies_ms: deque = field(default_factory=lambda: deque(maxlen=LATENCY_WINDOW))
    started_at: float = field(default_factory=time.time)
    next_job_id: int = 1


def _predict_window(state: ServiceState, window: Window) -> dict:
    """Full pipeline for one window; returns the prediction log entry."""
    t0 = time.perf_counter()
    cfg = state.bundle.config
    fv = feat.extract_features(feat.denoise(window, cfg.kernel))
    fv = feat.normalize(fv, state.bundle.normalizer)
    emb, _ = tensor_nn.forward(state.bundle.params, fv[None, :])
    pred = ncm.classify(emb[0], state.prototypes)
    latency_ms = (time.perf_counter() - t0) * 1e3
    state.latencies_ms.append(latency_ms)
    entry = {
        "t": window.end_us / 1e6,
        "label_name": state.bundle.registry.get(pred.label).name,
        "score": pred.score,
        "margin": pred.margin,
        "uncertain": pred.margin < cfg.margin_threshold,
        "model_version": state.bundle.model_version,
        "latency_ms": latency_ms,
    }
    state.predictions.append(entry)
    return entry


def create_app(bundle: EdgeBundle, *, fixtures_dir=None, console_dir=None,
               autosave_path=None) -> FastAPI:
    cfg = bundle.config
    state = ServiceState(
        bundle=bundle,
        prototypes=ncm.compute_prototypes(bundle.support, bundle.params),
        windower=StreamWindower(cfg.window_len, channels=cfg.channels),
    )

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        yield
        if autosave_path is not None:
            learner.save_bundle(state.bundle, autosave_path)

    app = FastAPI(title="magneto edge service", lifespan=lifespan)
    lock = threading.Lock()
    app.state.engine = state  # exposed for tests

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message})

    def _ingest_frames(payload_frames: list[dict], rebase: bool = False) -> dict:
        frames = []
        for i, item in enumerate(payload_frames):
            try:
                ts = int(item["timestamp_us"])
                channels = [float(v) for v in item["channels"]]
            except (KeyError, TypeError, ValueError):
                raise ApiError(400, "malformed_frame",
                               f"frame {i} is malformed")
            if len(channels) != cfg.channels:
                raise ApiError(
                    409, "channel_mismatch",
                    f"expected {cfg.channels} channels, got {len(channels)}",
                )
            if not all(np.isfinite(channels)):
                raise ApiError(400, "malformed_frame",
                               f"frame {i} has non-finite values")
            frames.append(SensorFrame(timestamp_us=ts, channels=np.array(channels)))

        emitted = 0
        latest = None
        with lock:
            if rebase and frames:
                last = state.windower._last_ts
                if last is not None and frames[0].timestamp_us <= last:
                    shift = last + 8333 - frames[0].timestamp_us
                    frames = [SensorFrame(f.timestamp_us + shift, f.channels)
                              for f in frames]
            for frame in frames:
                try:
                    win = state.windower.push(frame)
                except TimestampRegressionError as exc:
                    raise ApiError(400, "timestamp_regression", str(exc))
                if state.recording_active:
                    state.recording_frames.append(frame)
                if win is not None:
                    emitted += 1
                    latest = _predict_window(state, win)
        return {"windows_emitted": emitted, "latest_prediction": latest}

    @app.post("/api/frames")
    async def post_frames(body: dict):
        frames = body.get("frames")
        if not isinstance(frames, list):
            raise ApiError(400, "malformed_body", "body must contain a frames list")
        return _ingest_frames(frames)

    @app.get("/api/predictions")
    async def get_predictions(limit: int = PREDICTION_LOG_BOUND):
        with lock:
            entries = list(state.predictions)[-max(0, limit):]
        return list(reversed(entries))

    @app.post("/api/recordings")
    async def post_recordings(body: dict):
        action = body.get("action")
        label = body.get("label")
        with lock:
            if action == "start":
                if state.recording_active:
                    raise ApiError(409, "recording_active",
                                   "a recording is already in progress")
                state.recording_active = True
                state.recording_frames = []
            elif action == "stop":
                if not state.recording_active:
                    raise ApiError(409, "no_recording", "no active recording")
                if not label:
                    raise ApiError(400, "label_required",
                                   "stop requires a label")
                state.pending[label] = state.recording_frames
                state.recording_active = False
                state.recording_frames = []
            elif action == "discard":
                state.recording_active = False
                state.recording_frames = []
            else:
                raise ApiError(400, "bad_action",
                               "action must be start, stop, or discard")
            return {
                "recording": state.recording_active,
                "frames": len(state.recording_frames),
                "pending_labels": sorted(state.pending),
            }

    def _run_training(job: TrainingJob, frames: list[SensorFrame]):
        def progress(phase, epoch, loss):
            job.phase, job.epoch, job.loss = phase, epoch, float(loss)

        try:
            old_bundle = state.bundle
            windows = segment(frames, old_bundle.config.window_len,
                              old_bundle.config.hop)
            if job.mode == "add_class":
                new_bundle, fr = learner.learn_class(
                    old_bundle, job.label, windows,
                    created_at=time.time(), progress=progress)
            else:
                new_bundle, fr = learner.calibrate_class(
                    old_bundle, job.label, windows, progress=progress)
            protos = ncm.compute_prototypes(new_bundle.support, new_bundle.params)
            with lock:
                state.bundle = new_bundle
                state.prototypes = protos
                state.last_forgetting = fr
                state.pending.pop(job.label, None)
                job.state, job.phase = "done", "done"
        except Exception as exc:  # old bundle stays live on any failure
            job.state, job.error = "failed", str(exc)

    @app.post("/api/train", status_code=202)
    async def post_train(body: dict):
        mode = body.get("mode")
        label = body.get("label")
        if mode not in ("add_class", "calibrate") or not label:
            raise ApiError(400, "bad_request",
                           "mode must be add_class or calibrate, with a label")
        with lock:
            if state.job is not None and state.job.state == "running":
                raise ApiError(409, "job_running",
                               "a training job is already running")
            if label not in state.pending:
                raise ApiError(404, "no_pending_dataset",
                               f"no pending dataset for label {label!r}")
            job = TrainingJob(job_id=state.next_job_id, mode=mode, label=label)
            state.next_job_id += 1
            state.job = job
            frames = state.pending[label]
        thread = threading.Thread(target=_run_training, args=(job, frames),
                                  daemon=True)
        thread.start()
        return {"job_id": job.job_id}

    @app.get("/api/status")
    async def get_status():
        with lock:
            lat = sorted(state.latencies_ms)
            job = state.job
            return {
                "model_version": state.bundle.model_version,
                "activities": [
                    {"id": aid, "name": state.bundle.registry.get(aid).name,
                     "origin": state.bundle.registry.get(aid).origin}
                    for aid in state.bundle.registry.ids()
                ],
                "job": None if job is None else {
                    "job_id": job.job_id, "mode": job.mode, "label": job.label,
                    "state": job.state, "phase": job.phase,
                    "epoch": job.epoch, "loss": job.loss, "error": job.error,
                },
                "bundle_bytes": len(state.bundle.to_bytes()),
                "uptime_s": time.time() - state.started_at,
                "latency_ms": {
                    "median": lat[len(lat) // 2] if lat else None,
                    "p99": lat[min(len(lat) - 1, int(len(lat) * 0.99))] if lat else None,
                },
                "recording": state.recording_active,
                "pending_labels": sorted(state.pending),
            }

    @app.get("/api/report/forgetting")
    async def get_forgetting():
        with lock:
            if state.last_forgetting is None:
                raise ApiError(404, "no_report", "no training has completed yet")
            return state.last_forgetting.to_jsonable()

    if fixtures_dir is not None:
        fixtures_path = Path(fixtures_dir)

        @app.get("/api/fixtures")
        async def list_fixtures():
            return sorted(p.name for p in fixtures_path.glob("*.trace"))

        def _replay(frames_payload, speed):
            chunk = 60
            gap_s = chunk / 120.0 / speed
            for i in range(0, len(frames_payload), chunk):
                _ingest_frames(frames_payload[i:i + chunk], rebase=True)
                if gap_s > 0:
                    time.sleep(gap_s)

        @app.post("/api/fixtures/replay")
        async def replay_fixture(body: dict):
            name = body.get("name")
            speed = float(body.get("speed", 10.0))
            path = fixtures_path / str(name)
            if not name or not path.is_file() or path.suffix != ".trace":
                raise ApiError(404, "no_fixture", f"unknown fixture {name!r}")
            _header, frames = parse_trace_with_header(path.read_bytes())
            payload = [
                {"timestamp_us": f.timestamp_us, "channels": f.channels.tolist()}
                for f in frames
            ]
            threading.Thread(target=_replay, args=(payload, speed),
                             daemon=True).start()
            return {"frames": len(payload), "speed": speed}

    if console_dir is not None:
        app.mount("/", StaticFiles(directory=console_dir, html=True),
                  name="console")

    return app
