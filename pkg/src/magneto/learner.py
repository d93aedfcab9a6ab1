"""Lifecycle orchestration: offline pretraining, on-device class addition and
calibration, evaluation, and bundle persistence.

All operations are atomic: they work on copies and either return a complete
new bundle or raise, leaving the input bundle untouched. Everything is
deterministic given the config seed (registration timestamps default to 0 so
identical runs produce bit-identical bundles; callers that care about wall
clock can pass their own).
"""

from __future__ import annotations

import binascii
import json
import math
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import features as feat
from . import ncm, objective, tensor_nn
from .features import Normalizer
from .ingest import Window
from .memory import (ORIGIN_PRETRAINED, ORIGIN_USER_ADDED, ActivityRegistry,
                     SupportSet)
from .tensor_nn import AdamState, ModelParams

BUNDLE_MAGIC = b"MGBD"
BUNDLE_FORMAT_VERSION = 1
BUNDLE_BYTE_BUDGET = 5 * 1024 * 1024  # hard on-device budget

DEFAULT_PRETRAIN_EPOCHS = 30
DEFAULT_INCREMENTAL_EPOCHS = 15
MIN_RECORDING_WINDOWS = 30


class BudgetError(ValueError):
    """Bundle exceeds the on-device byte budget; carries a per-section breakdown."""

    def __init__(self, total: int, breakdown: dict[str, int]):
        self.total = total
        self.breakdown = breakdown
        detail = ", ".join(f"{k}={v}" for k, v in breakdown.items())
        super().__init__(
            f"bundle is {total} bytes, over the {BUNDLE_BYTE_BUDGET} byte budget "
            f"({detail})"
        )


class BundleFormatError(ValueError):
    """Raised on malformed bundle files."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; the operation was aborted."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int | None = None  # None: 30 for pretrain, 15 for incremental
    batch_size: int = 64
    lr: float = 1e-3
    temperature: float = 0.1
    distill_weight: float = 1.0
    seed: int = 0
    channels: int = 10
    window_len: int = 120
    hop: int = 60
    kernel: int = 5
    capacity: int = 200
    margin_threshold: float = 0.05
    layer_dims: tuple[int, ...] = tensor_nn.DEFAULT_LAYER_DIMS

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.lr <= 0 or self.temperature <= 0 or self.distill_weight < 0:
            raise ValueError("lr and temperature must be positive, distill_weight >= 0")
        object.__setattr__(self, "layer_dims", tuple(self.layer_dims))

    def to_jsonable(self) -> dict:
        d = asdict(self)
        d["layer_dims"] = list(self.layer_dims)
        return d

    @classmethod
    def from_jsonable(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["layer_dims"] = tuple(d["layer_dims"])
        return cls(**d)


@dataclass
class EdgeBundle:
    """Complete persisted on-device state."""

    params: ModelParams
    support: SupportSet
    normalizer: Normalizer
    config: TrainConfig

    @property
    def registry(self) -> ActivityRegistry:
        return self.support.registry

    @property
    def model_version(self) -> int:
        return self.params.version

    def to_bytes(self) -> bytes:
        return _bundle_to_bytes(self)

    def equals(self, other: "EdgeBundle") -> bool:
        return self.to_bytes() == other.to_bytes()


@dataclass(frozen=True)
class EvalReport:
    overall_accuracy: float
    per_class_accuracy: dict[str, float]
    confusion: np.ndarray          # rows: true class, cols: predicted
    class_ids: list[int]           # row/col order of the confusion matrix
    class_names: list[str]
    count: int

    def to_jsonable(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "per_class_accuracy": self.per_class_accuracy,
            "confusion": self.confusion.tolist(),
            "class_ids": self.class_ids,
            "class_names": self.class_names,
            "count": self.count,
        }


@dataclass(frozen=True)
class ForgettingReport:
    new_class: str
    new_class_accuracy: float
    before: dict[str, float]   # per-old-class accuracy before retraining
    after: dict[str, float]    # same classes, after retraining

    @property
    def drops(self) -> dict[str, float]:
        return {k: self.before[k] - self.after[k] for k in self.before}

    @property
    def max_drop(self) -> float:
        return max(self.drops.values(), default=0.0)

    def to_jsonable(self) -> dict:
        return {
            "new_class": self.new_class,
            "new_class_accuracy": self.new_class_accuracy,
            "before": self.before,
            "after": self.after,
            "drops": self.drops,
            "max_drop": self.max_drop,
        }


# ---------------------------------------------------------------------------
# feature pipeline


def windows_to_features(windows: list[Window], config: TrainConfig,
                        normalizer: Normalizer | None = None) -> np.ndarray:
    """denoise -> extract -> (optionally) normalize, one row per window."""
    rows = [feat.extract_features(feat.denoise(w, config.kernel)) for w in windows]
    arr = np.asarray(rows, dtype=np.float64)
    if normalizer is not None:
        arr = (arr - normalizer.mean) / normalizer.std
    return arr


# ---------------------------------------------------------------------------
# training loop


def _balanced_batches(labels: np.ndarray, batch_size: int, n_batches: int,
                      rng: np.random.Generator) -> list[np.ndarray]:
    """Index batches drawing near-equal counts per class (with replacement
    inside small classes) so new-class samples are never swamped."""
    classes = np.unique(labels)
    pools = {c: np.flatnonzero(labels == c) for c in classes}
    per = batch_size // len(classes)
    rem = batch_size - per * len(classes)
    batches = []
    for _ in range(n_batches):
        counts = {c: per for c in classes}
        for c in rng.choice(classes, size=rem, replace=False) if rem else []:
            counts[c] += 1
        idx = np.concatenate([
            rng.choice(pools[c], size=counts[c], replace=len(pools[c]) < counts[c])
            for c in classes
        ])
        rng.shuffle(idx)
        batches.append(idx)
    return batches


def _train_embedding(params: ModelParams, x: np.ndarray, y: np.ndarray,
                     old_emb: np.ndarray | None, has_old: np.ndarray | None,
                     config: TrainConfig, epochs: int,
                     progress=None, phase: str = "train") -> ModelParams:
    """Optimize the joint objective on (x, y); mutates and returns a fresh copy
    of params. old_emb/has_old mark samples with frozen-teacher embeddings."""
    out = params.copy()
    state = AdamState.for_params(out)
    rng = np.random.default_rng(config.seed)
    n_batches = max(1, math.ceil(x.shape[0] / config.batch_size))
    for epoch in range(1, epochs + 1):
        batches = _balanced_batches(y, min(config.batch_size, x.shape[0]),
                                    n_batches, rng)
        epoch_loss = 0.0
        for idx in batches:
            emb, cache = tensor_nn.forward(out, x[idx])
            if old_emb is not None and has_old is not None:
                rows = np.flatnonzero(has_old[idx])
                old_rows = old_emb[idx[has_old[idx]]]
            else:
                rows, old_rows = np.empty(0, dtype=int), None
            report = objective.joint_loss(
                emb, y[idx],
                emb_old_on_overlap=old_rows if rows.size else None,
                overlap_rows=rows if rows.size else None,
                temperature=config.temperature,
                distill_weight=config.distill_weight,
            )
            if not np.isfinite(report.total):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} "
                    f"(contrastive={report.contrastive}, "
                    f"distillation={report.distillation})"
                )
            grads = tensor_nn.backward(out, cache, report.grad_wrt_embeddings)
            tensor_nn.optimizer_step(out, grads, state, config.lr)
            epoch_loss += report.total
        if progress is not None:
            progress(phase, epoch, epoch_loss / n_batches)
    return out


# ---------------------------------------------------------------------------
# classification helpers


def _classify_features(params: ModelParams, prototypes, feats: np.ndarray) -> np.ndarray:
    emb, _ = tensor_nn.forward(params, np.asarray(feats, dtype=np.float64))
    proto_mat = np.stack([p.vector for p in prototypes])
    ids = np.array([p.class_id for p in prototypes])
    scores = emb @ proto_mat.T
    # argmax with lowest-id tie-break: ids are sorted ascending by construction
    order = np.argsort(ids)
    return ids[order][np.argmax(scores[:, order], axis=1)]


def _support_accuracy(params: ModelParams, prototypes, ss: SupportSet,
                      class_ids: list[int]) -> dict[str, float]:
    out = {}
    for aid in class_ids:
        feats = ss.vectors(aid)
        pred = _classify_features(params, prototypes, feats)
        out[ss.registry.get(aid).name] = float(np.mean(pred == aid))
    return out


# ---------------------------------------------------------------------------
# lifecycle operations


def pretrain(dataset: dict[str, list[Window]], config: TrainConfig = TrainConfig(),
             progress=None) -> EdgeBundle:
    """Offline initialization: fit the normalizer, train the embedding net
    with the contrastive loss only, and distill the dataset into a bounded
    support set. Deterministic given config.seed."""
    if len(dataset) < 2:
        raise ValueError("pretraining needs at least 2 classes")
    registry = ActivityRegistry()
    raw_feats: dict[int, np.ndarray] = {}
    for name in dataset:
        windows = dataset[name]
        if not windows:
            raise ValueError(f"class {name!r} has no windows")
        aid = registry.register(name, ORIGIN_PRETRAINED, created_at=0.0)
        raw_feats[aid] = windows_to_features(windows, config)

    normalizer = feat.fit_normalizer(np.concatenate(list(raw_feats.values())))
    norm_feats = {
        aid: ((arr - normalizer.mean) / normalizer.std).astype(np.float32)
        for aid, arr in raw_feats.items()
    }

    x = np.concatenate([norm_feats[aid] for aid in sorted(norm_feats)])
    y = np.concatenate([
        np.full(norm_feats[aid].shape[0], aid) for aid in sorted(norm_feats)
    ])
    params = tensor_nn.init_network(config.seed, config.layer_dims)
    epochs = config.epochs if config.epochs is not None else DEFAULT_PRETRAIN_EPOCHS
    params = _train_embedding(params, x.astype(np.float64), y, None, None,
                              config, epochs, progress, phase="pretrain")
    params.version = 1

    feature_dim = normalizer.dim
    support = SupportSet(registry, feature_dim, config.capacity)
    for aid in sorted(norm_feats):
        support = support.update_class(aid, norm_feats[aid], mode="merge")
    return EdgeBundle(params=params, support=support, normalizer=normalizer,
                      config=config)


def _incremental(bundle: EdgeBundle, target_id: int, target_name: str,
                 registry: ActivityRegistry, fresh: np.ndarray,
                 mode: str, config: TrainConfig,
                 progress=None) -> tuple[EdgeBundle, ForgettingReport]:
    """Shared path for learn_class (merge) and calibrate_class (replace)."""
    old_support = bundle.support
    old_ids = [aid for aid in old_support.classes() if aid != target_id]
    old_params = bundle.params

    # frozen-teacher embeddings for every retained old-class sample
    pools = [(aid, old_support.vectors(aid)) for aid in old_ids]
    x_parts = [arr.astype(np.float64) for _, arr in pools] + [fresh.astype(np.float64)]
    y_parts = [np.full(arr.shape[0], aid) for aid, arr in pools]
    y_parts.append(np.full(fresh.shape[0], target_id))
    x = np.concatenate(x_parts)
    y = np.concatenate(y_parts)
    n_old = sum(arr.shape[0] for _, arr in pools)
    has_old = np.zeros(x.shape[0], dtype=bool)
    has_old[:n_old] = True
    old_emb = np.zeros((x.shape[0], old_params.embedding_dim))
    if n_old:
        old_emb[:n_old], _ = tensor_nn.forward(old_params, x[:n_old])

    epochs = (config.epochs if config.epochs is not None
              else DEFAULT_INCREMENTAL_EPOCHS)
    new_params = _train_embedding(old_params, x, y, old_emb, has_old,
                                  config, epochs, progress, phase=mode)
    new_params.version = old_params.version + 1

    support = old_support.with_registry(registry).update_class(
        target_id, fresh.astype(np.float32), mode=mode)

    old_protos = ncm.compute_prototypes(old_support, old_params)
    new_protos = ncm.compute_prototypes(support, new_params)
    before = _support_accuracy(old_params, old_protos, old_support, old_ids)
    after = _support_accuracy(new_params, new_protos, support, old_ids)
    new_pred = _classify_features(new_params, new_protos, fresh)
    report = ForgettingReport(
        new_class=target_name,
        new_class_accuracy=float(np.mean(new_pred == target_id)),
        before=before,
        after=after,
    )
    new_bundle = EdgeBundle(params=new_params, support=support,
                            normalizer=bundle.normalizer, config=bundle.config)
    return new_bundle, report


def _recordings_to_features(bundle: EdgeBundle, recordings: list[Window],
                            config: TrainConfig) -> np.ndarray:
    if len(recordings) < MIN_RECORDING_WINDOWS:
        raise ValueError(
            f"need at least {MIN_RECORDING_WINDOWS} windows, got {len(recordings)}"
        )
    return windows_to_features(recordings, config, bundle.normalizer).astype(np.float32)


def learn_class(bundle: EdgeBundle, name: str, recordings: list[Window],
                config: TrainConfig | None = None, created_at: float = 0.0,
                progress=None) -> tuple[EdgeBundle, ForgettingReport]:
    """Add a new user-defined activity and retrain with distillation against
    the frozen previous model. The input bundle is never mutated."""
    config = bundle.config if config is None else config
    lowered = name.lower()
    if any(info.name.lower() == lowered
           for info in (bundle.registry.get(a) for a in bundle.registry.ids())):
        raise ValueError(f"activity name {name!r} already registered")
    fresh = _recordings_to_features(bundle, recordings, config)
    registry = bundle.registry.copy()
    new_id = registry.register(name, ORIGIN_USER_ADDED, created_at=created_at)
    return _incremental(bundle, new_id, name, registry, fresh, "merge",
                        config, progress)


def calibrate_class(bundle: EdgeBundle, name: str, recordings: list[Window],
                    config: TrainConfig | None = None,
                    progress=None) -> tuple[EdgeBundle, ForgettingReport]:
    """Replace an existing activity's exemplars with fresh personal data and
    retrain; no new id is registered."""
    config = bundle.config if config is None else config
    aid = bundle.registry.id_for_name(name)  # KeyError if unknown
    fresh = _recordings_to_features(bundle, recordings, config)
    return _incremental(bundle, aid, name, bundle.registry.copy(), fresh,
                        "replace", config, progress)


def evaluate(bundle: EdgeBundle, data: dict[str, list[Window]],
             config: TrainConfig | None = None) -> EvalReport:
    """Full-pipeline inference over labeled windows, with a confusion matrix
    over all registered classes."""
    config = bundle.config if config is None else config
    if not data or all(not v for v in data.values()):
        raise ValueError("evaluation data is empty")
    ids = bundle.registry.ids()
    names = [bundle.registry.get(a).name for a in ids]
    id_index = {aid: i for i, aid in enumerate(ids)}
    prototypes = ncm.compute_prototypes(bundle.support, bundle.params)

    confusion = np.zeros((len(ids), len(ids)), dtype=np.int64)
    total = 0
    for label_name, windows in data.items():
        aid = bundle.registry.id_for_name(label_name)  # KeyError if unknown
        if not windows:
            continue
        feats = windows_to_features(windows, config, bundle.normalizer)
        pred = _classify_features(bundle.params, prototypes, feats)
        for p in pred:
            confusion[id_index[aid], id_index[int(p)]] += 1
        total += len(windows)

    per_class = {}
    for i, name in enumerate(names):
        row = confusion[i].sum()
        if row:
            per_class[name] = float(confusion[i, i] / row)
    overall = float(np.trace(confusion) / total)
    return EvalReport(overall_accuracy=overall, per_class_accuracy=per_class,
                      confusion=confusion, class_ids=ids, class_names=names,
                      count=total)


def forgetting_from_evals(before: EvalReport, after: EvalReport,
                          new_class: str) -> ForgettingReport:
    """Build a forgetting report from held-out evaluations taken before and
    after a retraining (classes present in both, minus the new one)."""
    old = [n for n in before.per_class_accuracy if n != new_class]
    return ForgettingReport(
        new_class=new_class,
        new_class_accuracy=after.per_class_accuracy.get(new_class, 0.0),
        before={n: before.per_class_accuracy[n] for n in old
                if n in after.per_class_accuracy},
        after={n: after.per_class_accuracy[n] for n in old
               if n in after.per_class_accuracy},
    )


# ---------------------------------------------------------------------------
# persistence


def _normalizer_to_bytes(n: Normalizer) -> bytes:
    return (struct.pack("<I", n.dim)
            + n.mean.astype("<f8").tobytes()
            + n.std.astype("<f8").tobytes())


def _normalizer_from_bytes(data: bytes) -> Normalizer:
    if len(data) < 4:
        raise BundleFormatError("truncated normalizer section")
    (dim,) = struct.unpack_from("<I", data, 0)
    if len(data) != 4 + 16 * dim:
        raise BundleFormatError("normalizer section length mismatch")
    mean = np.frombuffer(data, dtype="<f8", count=dim, offset=4).copy()
    std = np.frombuffer(data, dtype="<f8", count=dim, offset=4 + 8 * dim).copy()
    return Normalizer(mean=mean, std=std)


def _bundle_to_bytes(bundle: EdgeBundle) -> bytes:
    meta = {
        "config": bundle.config.to_jsonable(),
        "model_version": bundle.params.version,
        "registry": bundle.registry.to_jsonable(),
    }
    sections = [
        tensor_nn.serialize(bundle.params),
        bundle.support.snapshot(),
        _normalizer_to_bytes(bundle.normalizer),
        json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8"),
    ]
    parts = [BUNDLE_MAGIC, struct.pack("<H", BUNDLE_FORMAT_VERSION)]
    for sec in sections:
        parts.append(struct.pack("<I", len(sec)))
        parts.append(sec)
        parts.append(struct.pack("<I", binascii.crc32(sec) & 0xFFFFFFFF))
    return b"".join(parts)


def bundle_breakdown(bundle: EdgeBundle) -> dict[str, int]:
    return {
        "model": len(tensor_nn.serialize(bundle.params)),
        "support": len(bundle.support.snapshot()),
        "normalizer": len(_normalizer_to_bytes(bundle.normalizer)),
    }


def save_bundle(bundle: EdgeBundle, path) -> int:
    """Write the single-file container; refuses files over the 5 MB budget.
    Returns the byte size written."""
    data = _bundle_to_bytes(bundle)
    if len(data) >= BUNDLE_BYTE_BUDGET:
        raise BudgetError(len(data), bundle_breakdown(bundle))
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def load_bundle(path) -> EdgeBundle:
    with open(path, "rb") as fh:
        data = fh.read()
    return bundle_from_bytes(data)


def bundle_from_bytes(data: bytes) -> EdgeBundle:
    if len(data) < 6 or data[:4] != BUNDLE_MAGIC:
        raise BundleFormatError("bad magic or truncated bundle")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != BUNDLE_FORMAT_VERSION:
        raise BundleFormatError(f"unsupported bundle version {version}")
    off = 6
    sections = []
    for i in range(4):
        if len(data) < off + 4:
            raise BundleFormatError(f"truncated at section {i}")
        (length,) = struct.unpack_from("<I", data, off)
        off += 4
        if len(data) < off + length + 4:
            raise BundleFormatError(f"truncated payload in section {i}")
        sec = data[off:off + length]
        off += length
        (crc,) = struct.unpack_from("<I", data, off)
        off += 4
        if binascii.crc32(sec) & 0xFFFFFFFF != crc:
            raise BundleFormatError(f"checksum mismatch in section {i}")
        sections.append(sec)
    if off != len(data):
        raise BundleFormatError("trailing bytes in bundle file")

    params = tensor_nn.deserialize(sections[0])
    support = SupportSet.restore(sections[1])
    normalizer = _normalizer_from_bytes(sections[2])
    meta = json.loads(sections[3].decode("utf-8"))
    params.version = int(meta["model_version"])
    config = TrainConfig.from_jsonable(meta["config"])
    # the JSON registry is authoritative metadata; it must match the MGSS copy
    if ActivityRegistry.from_jsonable(meta["registry"]) != support.registry:
        raise BundleFormatError("registry mismatch between sections")
    return EdgeBundle(params=params, support=support, normalizer=normalizer,
                      config=config)
