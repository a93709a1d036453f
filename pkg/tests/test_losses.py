import numpy as np
import pytest

from raypaint.errors import ConfigurationError, ContractViolation
from raypaint.losses import (LossWeights, PixelBatch, color_loss, depth_loss,
                             feature_loss, stage1_loss, unmask_loss)


def brute_force_sq(pred, gt):
    total = 0.0
    for r in range(len(pred)):
        row_p = np.atleast_1d(pred[r])
        row_g = np.atleast_1d(gt[r])
        for c in range(row_p.size):
            total += (row_p[c] - row_g[c]) ** 2
    return total


def test_color_loss_examples():
    gt = np.array([[1.0, 0.0, 0.0]])
    assert color_loss(gt, gt) == 0.0
    assert color_loss(np.zeros((1, 3)), gt) == 1.0


def test_color_loss_matches_brute_force():
    rng = np.random.default_rng(0)
    pred = rng.uniform(size=(100, 3))
    gt = rng.uniform(size=(100, 3))
    assert np.isclose(color_loss(pred, gt), brute_force_sq(pred, gt), rtol=1e-12)


def test_feature_loss_orthogonal_units():
    e1 = np.zeros((1, 8)); e1[0, 1] = 1.0
    e2 = np.zeros((1, 8)); e2[0, 2] = 1.0
    assert feature_loss(e1, e2) == 2.0
    rng = np.random.default_rng(1)
    pred = rng.uniform(size=(50, 8))
    gt = rng.uniform(size=(50, 8))
    assert np.isclose(feature_loss(pred, gt), brute_force_sq(pred, gt), rtol=1e-12)


def test_depth_loss_examples():
    assert depth_loss(np.array([0.5]), np.array([1.0])) == 0.25
    rng = np.random.default_rng(2)
    pred = rng.uniform(size=40)
    gt = rng.uniform(size=40)
    assert np.isclose(depth_loss(pred, gt), brute_force_sq(pred, gt), rtol=1e-12)


def test_loss_shape_mismatch():
    with pytest.raises(ContractViolation):
        color_loss(np.zeros((2, 3)), np.zeros((3, 3)))


def test_stage1_reduces_to_color_loss():
    rng = np.random.default_rng(3)
    batch = PixelBatch(color_pred=rng.uniform(size=(10, 3)),
                       color_gt=rng.uniform(size=(10, 3)))
    w = LossWeights(feature=0.0, depth=0.0)
    total, parts = stage1_loss(batch, w)
    assert total == color_loss(batch.color_pred, batch.color_gt)
    assert parts["feature"] == 0.0 and parts["depth"] == 0.0


def test_stage1_weighted_arithmetic():
    """Component losses (1.0, 2.0, 3.0) with lambdas (0.5, 0.1) -> 2.3."""
    batch = PixelBatch(
        color_pred=np.array([[1.0, 0.0, 0.0]]), color_gt=np.zeros((1, 3)),
        feature_pred=np.array([[1.0, 0.0]]), feature_gt=np.array([[0.0, 1.0]]),
        depth_pred=np.array([np.sqrt(3.0)]), depth_gt=np.array([0.0]),
    )
    total, parts = stage1_loss(batch, LossWeights(feature=0.5, depth=0.1))
    assert np.isclose(parts["color"], 1.0)
    assert np.isclose(parts["feature"], 2.0)
    assert np.isclose(parts["depth"], 3.0)
    assert np.isclose(total, 1.0 + 0.5 * 2.0 + 0.1 * 3.0)


def test_stage1_linear_in_lambdas():
    rng = np.random.default_rng(4)
    batch = PixelBatch(
        color_pred=rng.uniform(size=(8, 3)), color_gt=rng.uniform(size=(8, 3)),
        feature_pred=rng.uniform(size=(8, 4)), feature_gt=rng.uniform(size=(8, 4)),
        depth_pred=rng.uniform(size=8), depth_gt=rng.uniform(size=8),
    )
    t1, _ = stage1_loss(batch, LossWeights(feature=1.0, depth=0.0))
    t2, _ = stage1_loss(batch, LossWeights(feature=2.0, depth=0.0))
    t0, _ = stage1_loss(batch, LossWeights(feature=0.0, depth=0.0))
    assert np.isclose(t2 - t1, t1 - t0)


def test_negative_weights_rejected():
    with pytest.raises(ConfigurationError):
        LossWeights(feature=-0.1)
    with pytest.raises(ConfigurationError):
        LossWeights(unmask=-1.0)


def test_unmask_fully_masked_is_zero():
    rng = np.random.default_rng(5)
    pred = rng.uniform(size=(12, 3))
    gt = rng.uniform(size=(12, 3))
    assert unmask_loss(pred, gt, np.ones(12)) == 0.0


def test_unmask_all_zeros_equals_color_loss():
    rng = np.random.default_rng(6)
    pred = rng.uniform(size=(12, 3))
    gt = rng.uniform(size=(12, 3))
    assert unmask_loss(pred, gt, np.zeros(12)) == color_loss(pred, gt)


def test_unmask_invariant_to_masked_pixels():
    rng = np.random.default_rng(7)
    pred = rng.uniform(size=(12, 3))
    gt = rng.uniform(size=(12, 3))
    mask = (np.arange(12) % 3 == 0).astype(float)
    base = unmask_loss(pred, gt, mask)
    pred2 = pred.copy()
    pred2[mask >= 0.5] = rng.uniform(size=(int(mask.sum()), 3)) * 100.0
    assert unmask_loss(pred2, gt, mask) == base


def test_mask_thresholding_at_half():
    pred = np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    gt = np.zeros((2, 3))
    # 0.49 keeps the pixel (counts), 0.51 masks it out
    assert unmask_loss(pred, gt, np.array([0.49, 0.51])) == 1.0


def test_nonnegative_and_zero_iff_equal():
    rng = np.random.default_rng(8)
    pred = rng.uniform(size=(20, 3))
    assert color_loss(pred, pred) == 0.0
    gt = pred.copy()
    gt[3, 1] += 1e-3
    assert color_loss(pred, gt) > 0.0


def test_normalized_variant():
    rng = np.random.default_rng(9)
    pred = rng.uniform(size=(16, 3))
    gt = rng.uniform(size=(16, 3))
    assert np.isclose(color_loss(pred, gt, normalize=True),
                      color_loss(pred, gt) / 16.0)
