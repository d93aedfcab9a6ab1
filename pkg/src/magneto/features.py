"""Window denoising, statistical feature extraction, and z-score normalization.

Each channel contributes 8 statistics, in this frozen order:

    mean, std (population), min, max, median, IQR, RMS, zero-crossings

so the default 10-channel window yields an 80-dimensional feature vector.
The feature order is a public contract pinned by a golden test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import Window

STAT_NAMES = ("mean", "std", "min", "max", "median", "iqr", "rms", "zero_crossings")
STATS_PER_CHANNEL = len(STAT_NAMES)

DEFAULT_KERNEL = 5
STD_FLOOR = 1e-6


def feature_names(channel_names: tuple[str, ...]) -> list[str]:
    return [f"{ch}_{st}" for ch in channel_names for st in STAT_NAMES]


def denoise(window: Window, kernel: int = DEFAULT_KERNEL) -> Window:
    """Per-channel centered moving average with edge replication.

    kernel=1 returns the input unchanged.
    """
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError("kernel must be odd and >= 1")
    if kernel > window.length:
        raise ValueError("kernel must not exceed window length")
    if kernel == 1:
        return window
    half = kernel // 2
    padded = np.pad(window.frames, ((0, 0), (half, half)), mode="edge")
    out = np.empty_like(window.frames)
    # cumulative sum gives O(W) per channel
    csum = np.cumsum(padded, axis=1, dtype=np.float64)
    csum = np.concatenate([np.zeros((padded.shape[0], 1)), csum], axis=1)
    for j in range(window.length):
        out[:, j] = (csum[:, j + kernel] - csum[:, j]) / kernel
    return Window(frames=out, start_us=window.start_us, end_us=window.end_us,
                  label=window.label)


def _zero_crossings(x: np.ndarray) -> int:
    centered = x - x.mean()
    # adjacent strict sign flips; zeros do not count as crossings
    return int(np.count_nonzero(centered[:-1] * centered[1:] < 0))


def extract_features(window: Window) -> np.ndarray:
    """The 8-statistics-per-channel feature vector, float64, length C*8."""
    if window.length < 2:
        raise ValueError("window must contain at least 2 frames")
    mat = window.frames
    q25, q50, q75 = np.percentile(mat, [25, 50, 75], axis=1)
    blocks = np.stack(
        [
            mat.mean(axis=1),
            mat.std(axis=1),  # population std (ddof=0)
            mat.min(axis=1),
            mat.max(axis=1),
            q50,
            q75 - q25,
            np.sqrt(np.mean(mat * mat, axis=1)),
            np.array([_zero_crossings(mat[c]) for c in range(mat.shape[0])],
                     dtype=np.float64),
        ],
        axis=1,
    )
    return blocks.reshape(-1)


@dataclass(frozen=True)
class Normalizer:
    """Frozen per-dimension z-score statistics. Fit once at pretraining and
    never refit on-device, so stored support-set features stay comparable
    across model versions."""

    mean: np.ndarray  # (F,) float64
    std: np.ndarray   # (F,) float64, floored at STD_FLOOR

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.shape != std.shape or mean.ndim != 1:
            raise ValueError("mean and std must be 1-D vectors of equal length")
        if np.any(std <= 0):
            raise ValueError("std must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def fit_normalizer(features: list[np.ndarray] | np.ndarray) -> Normalizer:
    """Per-dimension mean and population std over the fitting set."""
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("need a non-empty list of feature vectors")
    mean = arr.mean(axis=0)
    std = np.maximum(arr.std(axis=0), STD_FLOOR)
    return Normalizer(mean=mean, std=std)


def normalize(fv: np.ndarray, n: Normalizer) -> np.ndarray:
    fv = np.asarray(fv, dtype=np.float64)
    if fv.shape != n.mean.shape:
        raise ValueError(f"dimension mismatch: {fv.shape} vs {n.mean.shape}")
    return (fv - n.mean) / n.std


def denormalize(fv: np.ndarray, n: Normalizer) -> np.ndarray:
    fv = np.asarray(fv, dtype=np.float64)
    if fv.shape != n.mean.shape:
        raise ValueError(f"dimension mismatch: {fv.shape} vs {n.mean.shape}")
    return fv * n.std + n.mean
