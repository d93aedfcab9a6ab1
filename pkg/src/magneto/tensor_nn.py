"""Minimal dense embedding network: forward, exact backprop, Adam, and
bit-exact serialization.

Parameters are stored float32 (they ship to the device); all forward and
gradient arithmetic runs in float64 for accuracy. Hidden layers are
affine+ReLU; the final layer is affine followed by per-row L2 normalization
so every embedding lands on the unit sphere.
"""

from __future__ import annotations

import binascii
import struct
from dataclasses import dataclass, field

import numpy as np

DEFAULT_LAYER_DIMS = (80, 1024, 512, 128, 64, 128)
NORM_FLOOR = 1e-12

MODEL_MAGIC = b"MGNT"
MODEL_FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Raised on malformed model files (bad magic/version/checksum/truncation)."""


@dataclass
class ModelParams:
    """Weights and biases of the embedding network.

    Treated as immutable after training completes; retraining produces a new
    object with version+1.
    """

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]  # weights[l]: (d_l, d_{l+1}) float32
    biases: list[np.ndarray]   # biases[l]: (d_{l+1},) float32
    version: int = 0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError("layer_dims needs >= 2 entries, all >= 1")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("weights/biases count must equal layer count")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[l], dims[l + 1]) or b.shape != (dims[l + 1],):
                raise ValueError(f"layer {l} shape mismatch")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l} has non-finite parameters")
        self.layer_dims = dims

    @property
    def embedding_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "ModelParams":
        return ModelParams(
            layer_dims=self.layer_dims,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            version=self.version,
        )

    def equals(self, other: "ModelParams") -> bool:
        return (
            self.layer_dims == other.layer_dims
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )


@dataclass
class Gradients:
    weights: list[np.ndarray]  # float64, shapes match ModelParams
    biases: list[np.ndarray]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.weights + self.biases)


@dataclass
class ForwardCache:
    """Activations retained for backprop; tied to the params that produced it."""

    params_id: int
    inputs: np.ndarray              # (B, d0) float64
    hidden: list[np.ndarray]        # post-ReLU activations per hidden layer
    pre_norm: np.ndarray            # (B, E) final affine output
    norms: np.ndarray               # (B,) floored row norms
    degenerate: np.ndarray          # (B,) bool, rows with ~zero pre-norm output


def init_network(seed: int, layer_dims=DEFAULT_LAYER_DIMS) -> ModelParams:
    """Glorot-uniform weights, zero biases; deterministic given seed."""
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError("layer_dims needs >= 2 entries, all >= 1")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(np.float32)
        weights.append(w)
        biases.append(np.zeros(fan_out, dtype=np.float32))
    return ModelParams(layer_dims=dims, weights=weights, biases=biases, version=0)


def forward(params: ModelParams, inputs: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Embed a batch; returns (B, E) unit-norm rows plus the backprop cache.

    Rows whose pre-normalization output is (near) zero are returned as zero
    and flagged degenerate in the cache.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != params.input_dim:
        raise ValueError(
            f"input width {x.shape[1]} does not match model input {params.input_dim}"
        )
    hidden: list[np.ndarray] = []
    a = x
    n_layers = len(params.weights)
    for l in range(n_layers - 1):
        a = np.maximum(a @ params.weights[l].astype(np.float64)
                       + params.biases[l].astype(np.float64), 0.0)
        hidden.append(a)
    z = a @ params.weights[-1].astype(np.float64) + params.biases[-1].astype(np.float64)
    raw_norms = np.linalg.norm(z, axis=1)
    degenerate = raw_norms < NORM_FLOOR
    norms = np.maximum(raw_norms, NORM_FLOOR)
    emb = z / norms[:, None]
    emb[degenerate] = 0.0
    cache = ForwardCache(
        params_id=id(params),
        inputs=x,
        hidden=hidden,
        pre_norm=z,
        norms=norms,
        degenerate=degenerate,
    )
    return emb, cache


def backward(params: ModelParams, cache: ForwardCache,
             grad_wrt_embeddings: np.ndarray) -> Gradients:
    """Exact reverse-mode gradients for the full network.

    The L2-normalization Jacobian is (I - zhat zhat^T)/||z||; ReLU uses the
    0-at-0 subgradient. Degenerate (zero) rows propagate zero gradient.
    """
    if cache.params_id != id(params):
        raise ValueError("cache does not match these parameters")
    g_emb = np.asarray(grad_wrt_embeddings, dtype=np.float64)
    if g_emb.shape != cache.pre_norm.shape:
        raise ValueError("upstream gradient shape mismatch")

    zhat = cache.pre_norm / cache.norms[:, None]
    # dL/dz = (g - (g . zhat) zhat) / ||z||
    proj = np.sum(g_emb * zhat, axis=1, keepdims=True)
    delta = (g_emb - proj * zhat) / cache.norms[:, None]
    delta[cache.degenerate] = 0.0

    n_layers = len(params.weights)
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for l in range(n_layers - 1, -1, -1):
        a_prev = cache.inputs if l == 0 else cache.hidden[l - 1]
        gw[l] = a_prev.T @ delta
        gb[l] = delta.sum(axis=0)
        if l > 0:
            delta = delta @ params.weights[l].astype(np.float64).T
            delta = delta * (cache.hidden[l - 1] > 0.0)
    return Gradients(weights=gw, biases=gb)


@dataclass
class AdamState:
    """First/second moment accumulators (float64) plus the step counter."""

    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        return cls(
            m_w=[np.zeros(w.shape, dtype=np.float64) for w in params.weights],
            v_w=[np.zeros(w.shape, dtype=np.float64) for w in params.weights],
            m_b=[np.zeros(b.shape, dtype=np.float64) for b in params.biases],
            v_b=[np.zeros(b.shape, dtype=np.float64) for b in params.biases],
        )


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def optimizer_step(params: ModelParams, grads: Gradients, state: AdamState,
                   lr: float) -> None:
    """One Adam update, mutating params and state in place.

    The model version is not bumped here; it increments once per completed
    retraining, not per step.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    if not grads.is_finite():
        raise ValueError("non-finite gradients; parameters left untouched")
    state.t += 1
    t = state.t
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    for l in range(len(params.weights)):
        for p, g, m, v in (
            (params.weights[l], grads.weights[l], state.m_w[l], state.v_w[l]),
            (params.biases[l], grads.biases[l], state.m_b[l], state.v_b[l]),
        ):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * (g * g)
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
            p -= update.astype(np.float32)


def serialize(params: ModelParams) -> bytes:
    """Model file: MGNT magic, u16 format version, u16 layer count, u32 dims,
    per-layer row-major f32 weights then f32 biases, CRC32 of the payload."""
    parts = [struct.pack("<HH", MODEL_FORMAT_VERSION, len(params.layer_dims))]
    parts.append(struct.pack(f"<{len(params.layer_dims)}I", *params.layer_dims))
    for w, b in zip(params.weights, params.biases):
        parts.append(np.ascontiguousarray(w, dtype=np.float32).tobytes())
        parts.append(np.ascontiguousarray(b, dtype=np.float32).tobytes())
    payload = b"".join(parts)
    crc = binascii.crc32(payload) & 0xFFFFFFFF
    return MODEL_MAGIC + payload + struct.pack("<I", crc)


def deserialize(data: bytes) -> ModelParams:
    if len(data) < 12:
        raise ModelFormatError("truncated model file")
    if data[:4] != MODEL_MAGIC:
        raise ModelFormatError("bad magic")
    payload, (crc,) = data[4:-4], struct.unpack("<I", data[-4:])
    if binascii.crc32(payload) & 0xFFFFFFFF != crc:
        raise ModelFormatError("checksum mismatch")
    fmt_version, n_dims = struct.unpack_from("<HH", payload, 0)
    if fmt_version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {fmt_version}")
    off = 4
    if len(payload) < off + 4 * n_dims:
        raise ModelFormatError("truncated dims")
    dims = struct.unpack_from(f"<{n_dims}I", payload, off)
    off += 4 * n_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w_bytes = 4 * fan_in * fan_out
        b_bytes = 4 * fan_out
        if len(payload) < off + w_bytes + b_bytes:
            raise ModelFormatError("truncated parameter data")
        w = np.frombuffer(payload, dtype="<f4", count=fan_in * fan_out, offset=off)
        off += w_bytes
        b = np.frombuffer(payload, dtype="<f4", count=fan_out, offset=off)
        off += b_bytes
        weights.append(w.reshape(fan_in, fan_out).copy())
        biases.append(b.copy())
    if off != len(payload):
        raise ModelFormatError("trailing bytes in model file")
    return ModelParams(layer_dims=dims, weights=weights, biases=biases)
