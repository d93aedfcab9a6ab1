"""Contrastive loss, distillation loss, and the joint objective."""

import math

import numpy as np
import pytest

from magneto import tensor_nn
from magneto.objective import (DegenerateBatchError, distill_loss, joint_loss,
                               supcon_loss)


def unit_rows(rng, b, e):
    z = rng.normal(size=(b, e))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


class TestSupConLoss:
    def test_closed_form_orthonormal_pairs(self):
        # two orthonormal pairs at tau=1: every anchor sees one positive with
        # similarity 1 and two negatives at 0, so L = -log(e / (e + 2))
        z = np.array([
            [1.0, 0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
        ])
        y = np.array([0, 0, 1, 1])
        loss, _ = supcon_loss(z, y, temperature=1.0)
        expect = -math.log(math.e / (math.e + 2.0))
        assert loss == pytest.approx(expect, abs=1e-12)

    def test_positive_free_anchors_skipped(self):
        rng = np.random.default_rng(0)
        z = unit_rows(rng, 5, 8)
        y = np.array([0, 0, 1, 2, 3])  # singletons 1, 2, 3 are skipped
        loss, grad = supcon_loss(z, y)
        assert np.isfinite(loss)
        assert np.all(np.isfinite(grad))

    def test_all_singletons_degenerate(self):
        rng = np.random.default_rng(1)
        with pytest.raises(DegenerateBatchError):
            supcon_loss(unit_rows(rng, 3, 4), np.array([0, 1, 2]))

    def test_bad_temperature(self):
        rng = np.random.default_rng(2)
        with pytest.raises(ValueError, match="temperature"):
            supcon_loss(unit_rows(rng, 4, 4), np.zeros(4), temperature=0.0)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            supcon_loss(np.ones((1, 4)), np.zeros(1))
        with pytest.raises(ValueError):
            supcon_loss(np.ones((4, 4)), np.zeros(3))

    def test_tight_clusters_beat_shuffled_labels(self):
        rng = np.random.default_rng(3)
        anchors = unit_rows(rng, 2, 16)
        z = np.concatenate([
            anchors[0] + 0.01 * rng.normal(size=(8, 16)),
            anchors[1] + 0.01 * rng.normal(size=(8, 16)),
        ])
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        y = np.repeat([0, 1], 8)
        aligned, _ = supcon_loss(z, y)
        shuffled, _ = supcon_loss(z, rng.permutation(y))
        assert aligned < shuffled


class TestDistillLoss:
    def test_zero_at_fixed_point(self):
        rng = np.random.default_rng(4)
        z = unit_rows(rng, 6, 8)
        loss, grad = distill_loss(z, z.copy())
        assert loss == 0.0
        assert np.all(grad == 0)

    def test_value_and_gradient(self):
        zn = np.array([[1.0, 0.0], [0.0, 2.0]])
        zo = np.zeros((2, 2))
        loss, grad = distill_loss(zn, zo)
        assert loss == pytest.approx((1.0 + 4.0) / 2)
        assert np.allclose(grad, zn)  # (2/B) * diff with B=2

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            distill_loss(np.ones((2, 3)), np.ones((3, 3)))


class TestJointLoss:
    def test_reduces_to_contrastive_without_teacher(self):
        rng = np.random.default_rng(5)
        z = unit_rows(rng, 6, 8)
        y = np.repeat([0, 1], 3)
        con, con_grad = supcon_loss(z, y)
        rep = joint_loss(z, y)
        assert rep.total == con
        assert rep.distillation == 0.0
        assert np.array_equal(rep.grad_wrt_embeddings, con_grad)

    def test_lambda_zero_ignores_teacher(self):
        rng = np.random.default_rng(6)
        z = unit_rows(rng, 4, 8)
        y = np.array([0, 0, 1, 1])
        rep = joint_loss(z, y, emb_old_on_overlap=unit_rows(rng, 4, 8),
                         distill_weight=0.0)
        con, _ = supcon_loss(z, y)
        assert rep.total == con

    def test_partial_overlap_rows(self):
        rng = np.random.default_rng(7)
        z = unit_rows(rng, 6, 8)
        y = np.repeat([0, 1], 3)
        old = unit_rows(rng, 2, 8)
        rows = np.array([0, 3])
        rep = joint_loss(z, y, emb_old_on_overlap=old, overlap_rows=rows,
                         distill_weight=2.0)
        dist, d_grad = distill_loss(z[rows], old)
        con, con_grad = supcon_loss(z, y)
        assert rep.total == pytest.approx(con + 2.0 * dist)
        expect = con_grad.copy()
        expect[rows] += 2.0 * d_grad
        assert np.allclose(rep.grad_wrt_embeddings, expect)

    def test_overlap_length_mismatch(self):
        rng = np.random.default_rng(8)
        z = unit_rows(rng, 4, 8)
        with pytest.raises(ValueError, match="overlap"):
            joint_loss(z, np.array([0, 0, 1, 1]),
                       emb_old_on_overlap=unit_rows(rng, 3, 8),
                       overlap_rows=np.array([0, 1]))

    def test_negative_weight_rejected(self):
        rng = np.random.default_rng(9)
        with pytest.raises(ValueError):
            joint_loss(unit_rows(rng, 4, 8), np.array([0, 0, 1, 1]),
                       distill_weight=-1.0)


class TestDescentSmoke:
    def test_loss_decreases_on_fixed_batch(self):
        rng = np.random.default_rng(10)
        params = tensor_nn.init_network(0, (8, 16, 4))
        x = rng.normal(size=(12, 8))
        y = np.repeat([0, 1, 2], 4)
        teacher, _ = tensor_nn.forward(params, x)
        state = tensor_nn.AdamState.for_params(params)
        losses = []
        for _ in range(10):
            emb, cache = tensor_nn.forward(params, x)
            rep = joint_loss(emb, y, emb_old_on_overlap=teacher)
            losses.append(rep.total)
            grads = tensor_nn.backward(params, cache, rep.grad_wrt_embeddings)
            tensor_nn.optimizer_step(params, grads, state, lr=1e-3)
        assert losses[-1] < losses[0]
