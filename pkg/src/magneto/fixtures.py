"""Synthetic activity presets: desk-scale stand-ins for field recordings.

Each class is anchored at a (base, amplitude, frequency, noise) operating
point; recordings are drawn as short sessions whose parameters jitter around
the anchor, giving within-class spread. Neighboring anchors sit close enough
that class clusters overlap at the edges, so incremental retraining without
distillation measurably disturbs old classes while the distilled run stays
stable.
"""

from __future__ import annotations

import math

import numpy as np

from .ingest import (DEFAULT_CHANNELS, DEFAULT_RATE_HZ, ChannelSpec, TraceSpec,
                     Window, segment, synthesize_trace)

# (base, amplitude, frequency_hz, noise_sigma) anchors per class
PRESET_CLASSES: dict[str, tuple[float, float, float, float]] = {
    "still": (0.5, 0.08, 0.0, 0.30),
    "walk": (1.0, 1.2, 2.0, 0.40),
    "run": (1.5, 2.2, 2.8, 0.50),
    "drive": (2.1, 0.7, 0.5, 0.40),
    "escooter": (2.6, 1.2, 1.3, 0.40),
}

NEW_CLASS_NAME = "gesture_hi"
# high-amplitude placement: learnable from a short recording, while its
# arrival still perturbs neighboring boundaries when distillation is off
NEW_CLASS_PARAMS = (1.0, 3.2, 1.6, 0.40)

SESSION_WINDOWS = 10      # windows per synthetic recording session
SESSION_JITTER = 0.18     # relative sigma of per-session parameter jitter


def _channel_fanout(base: float, amp: float, freq: float, sigma: float,
                    channels: int) -> tuple[ChannelSpec, ...]:
    return tuple(
        ChannelSpec(
            base=base * (1.0 + 0.15 * c),
            amplitude=amp * (0.6 + 0.08 * c),
            frequency_hz=freq * (1.0 + 0.05 * c),
            noise_sigma=sigma,
        )
        for c in range(channels)
    )


def class_spec(name: str, params: tuple[float, float, float, float],
               duration_s: float, seed: int,
               channels: int = DEFAULT_CHANNELS) -> TraceSpec:
    """A single fixed-parameter trace spec at the class anchor."""
    base, amp, freq, sigma = params
    return TraceSpec(class_name=name, duration_s=duration_s,
                     channels=_channel_fanout(base, amp, freq, sigma, channels),
                     seed=seed, rate_hz=DEFAULT_RATE_HZ)


def session_specs(name: str, params: tuple[float, float, float, float],
                  n_sessions: int, session_duration_s: float, seed: int,
                  jitter: float = SESSION_JITTER,
                  channels: int = DEFAULT_CHANNELS) -> list[TraceSpec]:
    """Session specs with per-session parameter jitter around the anchor."""
    base, amp, freq, sigma = params
    rng = np.random.default_rng(seed)
    specs = []
    for _ in range(n_sessions):
        b = base * (1.0 + rng.normal(0.0, jitter))
        a = max(0.0, amp * (1.0 + rng.normal(0.0, jitter)))
        f = max(0.0, freq * (1.0 + rng.normal(0.0, jitter)))
        trace_seed = int(rng.integers(0, 2**63 - 1))
        specs.append(TraceSpec(
            class_name=name, duration_s=session_duration_s,
            channels=_channel_fanout(b, a, f, sigma, channels),
            seed=trace_seed, rate_hz=DEFAULT_RATE_HZ,
        ))
    return specs


def class_windows(name: str, params: tuple[float, float, float, float],
                  n_windows: int, seed: int, window_len: int = 120,
                  hop: int = 60, jitter: float = SESSION_JITTER,
                  session_windows: int = SESSION_WINDOWS) -> list[Window]:
    """n_windows labeled windows drawn from jittered sessions."""
    n_sessions = math.ceil(n_windows / session_windows)
    frames_per_session = window_len + (session_windows - 1) * hop
    duration_s = frames_per_session / DEFAULT_RATE_HZ
    windows: list[Window] = []
    for spec in session_specs(name, params, n_sessions, duration_s, seed, jitter):
        frames = synthesize_trace(spec)
        windows.extend(segment(frames, window_len, hop, label=name))
    return windows[:n_windows]


def make_dataset(n_windows: int, seed: int = 7, include_new: bool = False,
                 window_len: int = 120, hop: int = 60) -> dict[str, list[Window]]:
    """Labeled windows for every preset class (plus the held-back new class
    when requested). Different seeds yield disjoint session draws."""
    items = dict(PRESET_CLASSES)
    if include_new:
        items[NEW_CLASS_NAME] = NEW_CLASS_PARAMS
    return {
        name: class_windows(name, params, n_windows, seed + 101 * i,
                            window_len, hop)
        for i, (name, params) in enumerate(items.items())
    }


def new_class_windows(n_windows: int, seed: int = 7, window_len: int = 120,
                      hop: int = 60, session_windows: int = 5) -> list[Window]:
    """A user-style recording: many short sessions for coverage."""
    return class_windows(NEW_CLASS_NAME, NEW_CLASS_PARAMS, n_windows,
                         seed + 101 * len(PRESET_CLASSES), window_len, hop,
                         session_windows=session_windows)
