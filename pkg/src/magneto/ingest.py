"""Sensor trace parsing, synthesis, and windowing.

Trace files are line-oriented text: a header line
``#magneto-trace v1 channels=<C> rate_hz=<R> label=<name|->`` followed by
data rows ``timestamp_us,v1,...,vC``. Timestamps are integer microseconds
and must be monotone non-decreasing.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

DEFAULT_CHANNELS = 10
DEFAULT_RATE_HZ = 120.0
DEFAULT_WINDOW_LEN = 120

# Default channel semantics for C=10: 3-axis accelerometer, gyroscope,
# magnetometer, plus accelerometer magnitude. 10 channels x 8 statistics
# gives the 80-dimensional feature vector.
CHANNEL_NAMES = (
    "acc_x", "acc_y", "acc_z",
    "gyro_x", "gyro_y", "gyro_z",
    "mag_x", "mag_y", "mag_z",
    "acc_mag",
)

TRACE_MAGIC = "#magneto-trace v1"


class TraceFormatError(ValueError):
    """Raised for malformed trace files; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TimestampRegressionError(ValueError):
    """A frame arrived with a timestamp earlier than its predecessor."""


@dataclass(frozen=True)
class SensorFrame:
    """One timestamped multichannel sample."""

    timestamp_us: int
    channels: np.ndarray  # shape (C,), float64

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float64)
        if ch.ndim != 1:
            raise ValueError("channels must be a 1-D vector")
        if not np.all(np.isfinite(ch)):
            raise ValueError("channel values must be finite")
        object.__setattr__(self, "channels", ch)


@dataclass(frozen=True)
class Window:
    """A fixed-length segment of the stream, stored channels-major (C x W)."""

    frames: np.ndarray  # shape (C, W), float64
    start_us: int
    end_us: int
    label: str | None = None

    def __post_init__(self):
        mat = np.asarray(self.frames, dtype=np.float64)
        if mat.ndim != 2:
            raise ValueError("frames must be a C x W matrix")
        if mat.shape[1] < 1:
            raise ValueError("window must contain at least one frame")
        if not np.all(np.isfinite(mat)):
            raise ValueError("window values must be finite")
        if self.end_us <= self.start_us:
            raise ValueError("end_us must be greater than start_us")
        object.__setattr__(self, "frames", mat)

    @property
    def channel_count(self) -> int:
        return self.frames.shape[0]

    @property
    def length(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class ChannelSpec:
    """Sinusoid-plus-noise generator parameters for one channel."""

    base: float = 0.0
    amplitude: float = 0.0
    frequency_hz: float = 0.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class TraceSpec:
    """Synthetic trace description: per-channel sinusoids with gaussian noise."""

    class_name: str
    duration_s: float
    channels: tuple[ChannelSpec, ...]
    seed: int
    rate_hz: float = DEFAULT_RATE_HZ

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if not self.channels:
            raise ValueError("at least one channel spec required")
        object.__setattr__(self, "channels", tuple(self.channels))


@dataclass(frozen=True)
class TraceHeader:
    channels: int
    rate_hz: float
    label: str | None


_HEADER_RE = re.compile(
    r"^#magneto-trace v1 channels=(\d+) rate_hz=([0-9.eE+-]+) label=(.+)$"
)


def format_trace(frames: list[SensorFrame], header: TraceHeader) -> bytes:
    """Serialize frames to the trace file format. Floats use shortest
    round-trip repr so parse(format(x)) is bit-exact."""
    label = header.label if header.label is not None else "-"
    lines = [f"{TRACE_MAGIC} channels={header.channels} "
             f"rate_hz={_fmt_float(header.rate_hz)} label={label}"]
    for fr in frames:
        vals = ",".join(_fmt_float(v) for v in fr.channels)
        lines.append(f"{fr.timestamp_us},{vals}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _fmt_float(v: float) -> str:
    return repr(float(v))


def parse_trace_with_header(data: bytes) -> tuple[TraceHeader, list[SensorFrame]]:
    """Parse a trace file, validating structure line by line."""
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise TraceFormatError(f"not valid UTF-8: {exc}") from exc
    lines = text.split("\n")
    if not lines or not lines[0].startswith("#magneto-trace"):
        raise TraceFormatError("missing #magneto-trace header", line=1)
    m = _HEADER_RE.match(lines[0])
    if m is None:
        raise TraceFormatError("malformed header", line=1)
    n_channels = int(m.group(1))
    rate_hz = float(m.group(2))
    label: str | None = m.group(3)
    if label == "-":
        label = None
    if n_channels < 1:
        raise TraceFormatError("channel count must be >= 1", line=1)

    frames: list[SensorFrame] = []
    last_ts: int | None = None
    for lineno, raw in enumerate(lines[1:], start=2):
        if raw == "":
            continue
        parts = raw.split(",")
        if len(parts) != n_channels + 1:
            raise TraceFormatError(
                f"expected {n_channels} channels, got {len(parts) - 1}",
                line=lineno,
            )
        try:
            ts = int(parts[0])
        except ValueError:
            raise TraceFormatError(f"bad timestamp {parts[0]!r}", line=lineno)
        try:
            vals = np.array([float(p) for p in parts[1:]], dtype=np.float64)
        except ValueError:
            raise TraceFormatError("unparsable channel value", line=lineno)
        if not np.all(np.isfinite(vals)):
            raise TraceFormatError("non-finite channel value", line=lineno)
        if last_ts is not None and ts < last_ts:
            raise TraceFormatError(
                f"timestamp {ts} regresses below {last_ts}", line=lineno
            )
        last_ts = ts
        frames.append(SensorFrame(timestamp_us=ts, channels=vals))
    return TraceHeader(n_channels, rate_hz, label), frames


def parse_trace(data: bytes) -> list[SensorFrame]:
    """Parse a trace file and return its frames in timestamp order."""
    return parse_trace_with_header(data)[1]


def segment(
    frames: list[SensorFrame],
    window_len: int = DEFAULT_WINDOW_LEN,
    hop: int | None = None,
    label: str | None = None,
) -> list[Window]:
    """Batch segmentation: consecutive slices at offsets 0, hop, 2*hop, ...

    Trailing frames that cannot fill a window are dropped.
    """
    if hop is None:
        hop = window_len
    if window_len < 2:
        raise ValueError("window_len must be >= 2")
    if not (1 <= hop <= window_len):
        raise ValueError("hop must satisfy 1 <= hop <= window_len")
    n = len(frames)
    if n < window_len:
        return []
    windows = []
    for start in range(0, n - window_len + 1, hop):
        chunk = frames[start:start + window_len]
        mat = np.stack([f.channels for f in chunk], axis=1)
        windows.append(
            Window(
                frames=mat,
                start_us=chunk[0].timestamp_us,
                end_us=chunk[-1].timestamp_us,
                label=label,
            )
        )
    return windows


class StreamWindower:
    """Streaming windower: buffers pushed frames and emits a window whenever
    the buffer fills. Default hop equals the window length (non-overlapping),
    matching live inference; mutable single-owner state.
    """

    def __init__(self, window_len: int = DEFAULT_WINDOW_LEN, hop: int | None = None,
                 channels: int = DEFAULT_CHANNELS):
        if window_len < 2:
            raise ValueError("window_len must be >= 2")
        hop = window_len if hop is None else hop
        if not (1 <= hop <= window_len):
            raise ValueError("hop must satisfy 1 <= hop <= window_len")
        self.window_len = window_len
        self.hop = hop
        self.channels = channels
        self._buffer: list[SensorFrame] = []
        self._last_ts: int | None = None

    def push(self, frame: SensorFrame) -> Window | None:
        if len(frame.channels) != self.channels:
            raise ValueError(
                f"expected {self.channels} channels, got {len(frame.channels)}"
            )
        if self._last_ts is not None and frame.timestamp_us < self._last_ts:
            raise TimestampRegressionError(
                f"timestamp {frame.timestamp_us} regresses below {self._last_ts}"
            )
        self._last_ts = frame.timestamp_us
        self._buffer.append(frame)
        if len(self._buffer) < self.window_len:
            return None
        chunk = self._buffer[: self.window_len]
        mat = np.stack([f.channels for f in chunk], axis=1)
        win = Window(
            frames=mat,
            start_us=chunk[0].timestamp_us,
            end_us=chunk[-1].timestamp_us,
        )
        self._buffer = self._buffer[self.hop:]
        return win

    def reset(self) -> None:
        self._buffer = []
        self._last_ts = None


def synthesize_trace(spec: TraceSpec) -> list[SensorFrame]:
    """Generate a deterministic synthetic trace.

    Per channel: base + amplitude*sin(2*pi*f*t) + N(0, sigma), sampled at
    the spec's nominal rate.
    """
    rng = np.random.default_rng(spec.seed)
    n = int(round(spec.duration_s * spec.rate_hz))
    t = np.arange(n, dtype=np.float64) / spec.rate_hz
    cols = []
    for ch in spec.channels:
        signal = ch.base + ch.amplitude * np.sin(2.0 * math.pi * ch.frequency_hz * t)
        if ch.noise_sigma > 0:
            signal = signal + rng.normal(0.0, ch.noise_sigma, size=n)
        else:
            # burn the draw so adding noise elsewhere doesn't shift streams
            rng.normal(0.0, 1.0, size=n)
        cols.append(signal)
    mat = np.stack(cols, axis=0)
    timestamps = np.round(t * 1e6).astype(np.int64)
    return [
        SensorFrame(timestamp_us=int(timestamps[i]), channels=mat[:, i])
        for i in range(n)
    ]
