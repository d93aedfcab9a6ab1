"""Bounded per-class exemplar store and the activity registry.

The support set keeps at most K normalized feature vectors per class
(stored float32, matching the on-disk layout). Exemplars are chosen by
herding so the retained subset's mean tracks the full candidate mean, which
is what the prototype classifier cares about.
"""

from __future__ import annotations

import binascii
import struct
import time
from dataclasses import dataclass, field

import numpy as np

DEFAULT_CAPACITY = 200

SUPPORT_MAGIC = b"MGSS"
SUPPORT_FORMAT_VERSION = 1

ORIGIN_PRETRAINED = "pretrained"
ORIGIN_USER_ADDED = "user_added"
_ORIGIN_CODES = {ORIGIN_PRETRAINED: 0, ORIGIN_USER_ADDED: 1}
_ORIGIN_NAMES = {v: k for k, v in _ORIGIN_CODES.items()}


class SupportSetFormatError(ValueError):
    """Raised on malformed support-set files."""


@dataclass(frozen=True)
class ActivityInfo:
    name: str
    origin: str
    created_at: float  # unix seconds

    def __post_init__(self):
        if self.origin not in _ORIGIN_CODES:
            raise ValueError(f"unknown origin {self.origin!r}")


class ActivityRegistry:
    """ActivityId -> metadata. Names are unique case-insensitively and ids
    are never reused, even after (hypothetical) removal."""

    def __init__(self):
        self._entries: dict[int, ActivityInfo] = {}
        self._next_id = 0

    def register(self, name: str, origin: str, created_at: float | None = None) -> int:
        if not name or not name.strip():
            raise ValueError("activity name must be non-empty")
        lowered = name.lower()
        if any(info.name.lower() == lowered for info in self._entries.values()):
            raise ValueError(f"activity name {name!r} already registered")
        aid = self._next_id
        self._next_id += 1
        self._entries[aid] = ActivityInfo(
            name=name, origin=origin,
            created_at=time.time() if created_at is None else created_at,
        )
        return aid

    def __contains__(self, aid: int) -> bool:
        return aid in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, aid: int) -> ActivityInfo:
        if aid not in self._entries:
            raise KeyError(f"unregistered activity id {aid}")
        return self._entries[aid]

    def ids(self) -> list[int]:
        return sorted(self._entries)

    def names(self) -> dict[int, str]:
        return {aid: info.name for aid, info in sorted(self._entries.items())}

    def id_for_name(self, name: str) -> int:
        lowered = name.lower()
        for aid, info in self._entries.items():
            if info.name.lower() == lowered:
                return aid
        raise KeyError(f"no activity named {name!r}")

    def copy(self) -> "ActivityRegistry":
        out = ActivityRegistry()
        out._entries = dict(self._entries)
        out._next_id = self._next_id
        return out

    def to_jsonable(self) -> dict:
        return {
            "next_id": self._next_id,
            "entries": {
                str(aid): {
                    "name": info.name,
                    "origin": info.origin,
                    "created_at": info.created_at,
                }
                for aid, info in sorted(self._entries.items())
            },
        }

    @classmethod
    def from_jsonable(cls, data: dict) -> "ActivityRegistry":
        out = cls()
        for aid_str, entry in data["entries"].items():
            out._entries[int(aid_str)] = ActivityInfo(
                name=entry["name"], origin=entry["origin"],
                created_at=entry["created_at"],
            )
        out._next_id = int(data["next_id"])
        return out

    def __eq__(self, other):
        return (isinstance(other, ActivityRegistry)
                and self._entries == other._entries
                and self._next_id == other._next_id)


def herding_indices(candidates: np.ndarray, k: int) -> list[int]:
    """Greedy mean-matching selection; returns candidate indices in pick order.

    Each step adds the candidate that brings the running mean of the selected
    subset closest to the full candidate mean; ties break on lowest index.
    """
    cand = np.asarray(candidates, dtype=np.float64)
    if cand.ndim != 2 or cand.shape[0] == 0:
        raise ValueError("candidates must be a non-empty (n, F) array")
    n = cand.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n <= k:
        return list(range(n))
    target = cand.mean(axis=0)
    chosen: list[int] = []
    chosen_mask = np.zeros(n, dtype=bool)
    running_sum = np.zeros(cand.shape[1])
    for step in range(1, k + 1):
        trial_means = (running_sum[None, :] + cand) / step
        dists = np.linalg.norm(trial_means - target[None, :], axis=1)
        dists[chosen_mask] = np.inf
        pick = int(np.argmin(dists))  # argmin takes the lowest index on ties
        chosen.append(pick)
        chosen_mask[pick] = True
        running_sum += cand[pick]
    return chosen


def select_exemplars(candidates: np.ndarray, k: int) -> np.ndarray:
    """At most k representative vectors; identity (order preserved) when the
    candidate set already fits."""
    cand = np.asarray(candidates)
    idx = herding_indices(cand, k)
    return cand[idx]


class SupportSet:
    """Per-class exemplar lists plus the registry; single-writer, snapshot
    reads. Mutating operations return a new SupportSet."""

    def __init__(self, registry: ActivityRegistry, feature_dim: int,
                 capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.registry = registry
        self.feature_dim = feature_dim
        self.capacity = capacity
        self._vectors: dict[int, np.ndarray] = {}  # (n, F) float32 per class

    def classes(self) -> list[int]:
        return sorted(self._vectors)

    def count(self, aid: int) -> int:
        return self._vectors.get(aid, np.empty((0, self.feature_dim))).shape[0]

    def vectors(self, aid: int) -> np.ndarray:
        if aid not in self._vectors:
            raise KeyError(f"no exemplars for activity id {aid}")
        return self._vectors[aid]

    def total_count(self) -> int:
        return sum(v.shape[0] for v in self._vectors.values())

    def payload_bytes(self) -> int:
        return sum(v.nbytes for v in self._vectors.values())

    def update_class(self, aid: int, fresh: np.ndarray, mode: str = "merge") -> "SupportSet":
        """merge: herd over existing+fresh; replace: herd over fresh only."""
        if aid not in self.registry:
            raise KeyError(f"unregistered activity id {aid}")
        fresh = np.asarray(fresh, dtype=np.float32)
        if fresh.ndim != 2 or fresh.shape[0] == 0:
            raise ValueError("fresh must be a non-empty (n, F) array")
        if fresh.shape[1] != self.feature_dim:
            raise ValueError(
                f"feature dim {fresh.shape[1]} != expected {self.feature_dim}"
            )
        if mode == "merge":
            existing = self._vectors.get(aid)
            pool = fresh if existing is None else np.concatenate([existing, fresh])
        elif mode == "replace":
            pool = fresh
        else:
            raise ValueError(f"unknown mode {mode!r}")
        selected = select_exemplars(pool, self.capacity).astype(np.float32)
        out = self._clone()
        out._vectors[aid] = selected
        return out

    def _clone(self) -> "SupportSet":
        out = SupportSet(self.registry.copy(), self.feature_dim, self.capacity)
        out._vectors = dict(self._vectors)
        return out

    def with_registry(self, registry: ActivityRegistry) -> "SupportSet":
        out = self._clone()
        out.registry = registry
        return out

    def __eq__(self, other):
        return (isinstance(other, SupportSet)
                and self.registry == other.registry
                and self.feature_dim == other.feature_dim
                and self.capacity == other.capacity
                and self._vectors.keys() == other._vectors.keys()
                and all(np.array_equal(self._vectors[k], other._vectors[k])
                        for k in self._vectors))

    def snapshot(self) -> bytes:
        """MGSS container: registry entries then per-class f32 exemplar blocks,
        CRC32 trailer."""
        parts = [struct.pack("<HIII", SUPPORT_FORMAT_VERSION, self.capacity,
                             self.registry.to_jsonable()["next_id"],
                             self.feature_dim)]
        entries = self.registry.to_jsonable()["entries"]
        parts.append(struct.pack("<H", len(entries)))
        for aid_str, entry in entries.items():
            name_b = entry["name"].encode("utf-8")
            parts.append(struct.pack("<IBdH", int(aid_str),
                                     _ORIGIN_CODES[entry["origin"]],
                                     entry["created_at"], len(name_b)))
            parts.append(name_b)
        parts.append(struct.pack("<H", len(self._vectors)))
        for aid in sorted(self._vectors):
            vec = self._vectors[aid]
            parts.append(struct.pack("<III", aid, vec.shape[0], self.feature_dim))
            parts.append(np.ascontiguousarray(vec, dtype="<f4").tobytes())
        payload = b"".join(parts)
        crc = binascii.crc32(payload) & 0xFFFFFFFF
        return SUPPORT_MAGIC + payload + struct.pack("<I", crc)

    @classmethod
    def restore(cls, data: bytes) -> "SupportSet":
        if len(data) < 8 or data[:4] != SUPPORT_MAGIC:
            raise SupportSetFormatError("bad magic or truncated file")
        payload, (crc,) = data[4:-4], struct.unpack("<I", data[-4:])
        if binascii.crc32(payload) & 0xFFFFFFFF != crc:
            raise SupportSetFormatError("checksum mismatch")
        try:
            version, capacity, next_id, feature_dim = struct.unpack_from(
                "<HIII", payload, 0)
            off = 14
            if version != SUPPORT_FORMAT_VERSION:
                raise SupportSetFormatError(f"unsupported version {version}")
            (n_entries,) = struct.unpack_from("<H", payload, off)
            off += 2
            reg_data = {"next_id": next_id, "entries": {}}
            for _ in range(n_entries):
                aid, origin_code, created_at, name_len = struct.unpack_from(
                    "<IBdH", payload, off)
                off += struct.calcsize("<IBdH")
                name = payload[off:off + name_len].decode("utf-8")
                off += name_len
                reg_data["entries"][str(aid)] = {
                    "name": name,
                    "origin": _ORIGIN_NAMES[origin_code],
                    "created_at": created_at,
                }
            registry = ActivityRegistry.from_jsonable(reg_data)
            (n_classes,) = struct.unpack_from("<H", payload, off)
            off += 2
            vectors: dict[int, np.ndarray] = {}
            for _ in range(n_classes):
                aid, count, fdim = struct.unpack_from("<III", payload, off)
                off += 12
                if fdim != feature_dim:
                    raise SupportSetFormatError(
                        f"class {aid} feature dim {fdim} != header {feature_dim}")
                nbytes = 4 * count * fdim
                vec = np.frombuffer(payload, dtype="<f4", count=count * fdim,
                                    offset=off).reshape(count, fdim).copy()
                off += nbytes
                vectors[aid] = vec
        except (struct.error, IndexError) as exc:
            raise SupportSetFormatError(f"truncated support-set file: {exc}") from exc
        if off != len(payload):
            raise SupportSetFormatError("trailing bytes in support-set file")
        out = cls(registry, feature_dim, capacity)
        out._vectors = vectors
        return out
