"""Supervised contrastive loss, embedding distillation, and their weighted
combination, each with exact analytic gradients with respect to embeddings.

Gradients here stop at the embedding layer; the normalization Jacobian is
applied upstream by tensor_nn.backward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_TEMPERATURE = 0.1
DEFAULT_DISTILL_WEIGHT = 1.0


class DegenerateBatchError(ValueError):
    """No anchor in the batch has a positive; the contrastive loss is undefined."""


@dataclass(frozen=True)
class LossReport:
    total: float
    contrastive: float
    distillation: float
    grad_wrt_embeddings: np.ndarray  # (B, E)


def supcon_loss(embeddings: np.ndarray, labels: np.ndarray,
                temperature: float = DEFAULT_TEMPERATURE) -> tuple[float, np.ndarray]:
    """Multi-positive contrastive loss over a labeled batch of unit-norm rows.

    For each anchor i with positive set P(i), the per-anchor term is
    -(1/|P(i)|) sum_{p in P(i)} log( exp(z_i.z_p/tau) / sum_{a!=i} exp(z_i.z_a/tau) );
    the loss is the mean over anchors that have at least one positive.
    Anchors without positives are skipped.
    """
    z = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError("need a (B, E) batch with B >= 2")
    if y.shape != (z.shape[0],):
        raise ValueError("labels must be a length-B vector")
    if temperature <= 0:
        raise ValueError("temperature must be positive")

    b = z.shape[0]
    sim = (z @ z.T) / temperature
    eye = np.eye(b, dtype=bool)
    pos = (y[:, None] == y[None, :]) & ~eye
    n_pos = pos.sum(axis=1)
    anchors = n_pos > 0
    if not anchors.any():
        raise DegenerateBatchError("degenerate batch: no anchor has a positive")
    n_anchors = int(anchors.sum())

    # stabilized log-softmax over each row, excluding the diagonal
    sim_off = np.where(eye, -np.inf, sim)
    row_max = sim_off.max(axis=1, keepdims=True)
    exp = np.exp(sim_off - row_max)
    denom = exp.sum(axis=1, keepdims=True)
    log_prob = (sim_off - row_max) - np.log(denom)

    per_anchor = np.zeros(b)
    pos_log_prob = np.where(pos, log_prob, 0.0)  # keeps -inf off the diagonal out
    per_anchor[anchors] = -pos_log_prob[anchors].sum(axis=1) / n_pos[anchors]
    loss = float(per_anchor[anchors].mean())

    # dL/dsim for anchor rows: softmax(row) - pos_mask/|P(i)|, scaled 1/(tau*n_anchors)
    softmax = exp / denom
    g_sim = np.zeros_like(sim)
    g_sim[anchors] = (softmax[anchors] - pos[anchors] / n_pos[anchors][:, None])
    g_sim /= temperature * n_anchors
    grad = g_sim @ z + g_sim.T @ z
    return loss, grad


def distill_loss(emb_new: np.ndarray, emb_old: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared embedding drift against the frozen old model.

    emb_old is a constant target; the gradient flows only into emb_new.
    """
    zn = np.asarray(emb_new, dtype=np.float64)
    zo = np.asarray(emb_old, dtype=np.float64)
    if zn.shape != zo.shape:
        raise ValueError(f"shape mismatch: {zn.shape} vs {zo.shape}")
    b = zn.shape[0]
    diff = zn - zo
    loss = float(np.sum(diff * diff) / b)
    grad = (2.0 / b) * diff
    return loss, grad


def joint_loss(emb_new: np.ndarray, labels: np.ndarray,
               emb_old_on_overlap: np.ndarray | None = None,
               overlap_rows: np.ndarray | None = None,
               temperature: float = DEFAULT_TEMPERATURE,
               distill_weight: float = DEFAULT_DISTILL_WEIGHT) -> LossReport:
    """Contrastive plus weighted distillation.

    The distillation term covers only the batch rows listed in overlap_rows
    (samples the old model has embeddings for); with distill_weight=0 or no
    old embeddings the report reduces to the pure contrastive loss.
    """
    if distill_weight < 0:
        raise ValueError("distill_weight must be >= 0")
    con, grad = supcon_loss(emb_new, labels, temperature)
    grad = grad.copy()
    dist = 0.0
    if emb_old_on_overlap is not None and distill_weight > 0:
        if overlap_rows is None:
            rows = np.arange(emb_new.shape[0])
        else:
            rows = np.asarray(overlap_rows)
        if rows.shape[0] != np.asarray(emb_old_on_overlap).shape[0]:
            raise ValueError("overlap_rows must match emb_old_on_overlap")
        if rows.shape[0] > 0:
            dist, d_grad = distill_loss(emb_new[rows], emb_old_on_overlap)
            grad[rows] += distill_weight * d_grad
    total = con + distill_weight * dist
    return LossReport(total=total, contrastive=con, distillation=dist,
                      grad_wrt_embeddings=grad)
