"""Nearest-class-mean classification in the embedding space.

Prototypes are renormalized class means of support-sample embeddings; a
window is assigned to the class whose prototype has the highest cosine
similarity. With unit-norm vectors this matches argmin Euclidean distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_nn
from .memory import SupportSet
from .tensor_nn import ModelParams

DEFAULT_MARGIN_THRESHOLD = 0.05


@dataclass(frozen=True)
class Prototype:
    class_id: int
    vector: np.ndarray  # (E,) unit norm
    support_count: int

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        norm = np.linalg.norm(vec)
        if not np.isclose(norm, 1.0, atol=1e-6):
            raise ValueError(f"prototype for class {self.class_id} is not unit-norm")
        if self.support_count < 1:
            raise ValueError("support_count must be >= 1")
        object.__setattr__(self, "vector", vec)


@dataclass(frozen=True)
class Prediction:
    label: int
    score: float   # cosine similarity to the winning prototype
    margin: float  # winner minus runner-up (0 with a single class)
    per_class_scores: dict[int, float]


def compute_prototypes(ss: SupportSet, params: ModelParams) -> list[Prototype]:
    """Embed each class's exemplars and renormalize the mean embedding."""
    protos = []
    for aid in ss.classes():
        feats = ss.vectors(aid)
        if feats.shape[0] == 0:
            raise ValueError(f"class {aid} has no support samples")
        emb, _ = tensor_nn.forward(params, feats.astype(np.float64))
        mean = emb.mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm < 1e-12:
            raise ValueError(f"class {aid} mean embedding is degenerate")
        protos.append(Prototype(class_id=aid, vector=mean / norm,
                                support_count=feats.shape[0]))
    return protos


def classify(embedding: np.ndarray, prototypes: list[Prototype]) -> Prediction:
    """Argmax cosine similarity over prototypes; ties break on lowest class id."""
    if not prototypes:
        raise ValueError("no prototypes available")
    z = np.asarray(embedding, dtype=np.float64)
    scores = {p.class_id: float(z @ p.vector) for p in prototypes}
    # sort by (-score, class_id): ties resolve to the lowest id
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    label, best = ranked[0]
    margin = 0.0 if len(ranked) == 1 else best - ranked[1][1]
    return Prediction(label=label, score=best, margin=margin,
                      per_class_scores=scores)
