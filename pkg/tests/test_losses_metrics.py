import json
import math

import numpy as np
import pytest

from lssfnet.gradcheck import grad_error
from lssfnet.losses import LossConfig, bce_loss, combined_loss, jaccard_loss
from lssfnet.metrics import ConfusionCounts, aggregate, confusion, metrics

from conftest import t64


def brute_counts(pred, gt):
    tp = tn = fp = fn = 0
    for a, b in zip(pred.ravel().tolist(), gt.ravel().tolist()):
        if a and b:
            tp += 1
        elif a:
            fp += 1
        elif b:
            fn += 1
        else:
            tn += 1
    return tp, tn, fp, fn


# -- losses ---------------------------------------------------------------------------

def test_bce_examples():
    assert bce_loss(t64(np.full(10, 0.5)), np.zeros(10)).item() == pytest.approx(math.log(2))
    v = bce_loss(t64([0.9, 0.2]), np.array([1.0, 0.0])).item()
    assert v == pytest.approx(-(math.log(0.9) + math.log(0.8)) / 2, abs=1e-12)
    assert round(v, 4) == 0.1643
    g = np.array([1.0, 0.0, 1.0])
    assert bce_loss(t64(g), g).item() == pytest.approx(-math.log(1 - 1e-7), rel=1e-6)


def test_jaccard_loss_examples():
    g = (np.arange(16) % 3 == 0).astype(float)
    assert jaccard_loss(t64(g), g).item() == pytest.approx(0.0, abs=1e-15)
    assert jaccard_loss(t64(1 - g), g).item() == pytest.approx(1 - 1 / 17)
    assert jaccard_loss(t64(np.zeros(16)), np.zeros(16)).item() == 0.0


def test_combined_weights():
    rng = np.random.default_rng(0)
    p, g = rng.uniform(0.05, 0.95, 32), (rng.random(32) > 0.5).astype(float)
    assert combined_loss(t64(p), g, LossConfig(1, 0)).item() == bce_loss(t64(p), g).item()
    assert combined_loss(t64(p), g, LossConfig(0, 1)).item() == jaccard_loss(t64(p), g).item()
    parts = {}
    total = combined_loss(t64(p), g, parts=parts).item()
    assert total == pytest.approx(parts["bce"] + parts["jaccard"])


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(0, 0)
    with pytest.raises(ValueError):
        LossConfig(-1, 1)
    with pytest.raises(ValueError):
        LossConfig(smooth_eps=0)
    with pytest.raises(ValueError):
        bce_loss(t64(np.zeros(3)), np.zeros(4))


def test_single_pixel_flip_increases_loss():
    rng = np.random.default_rng(1)
    g = (rng.random(64) > 0.5).astype(float)
    p = np.where(g > 0, 0.9, 0.1)
    base = combined_loss(t64(p), g).item()
    for i in range(64):
        q = p.copy()
        q[i] = 1 - q[i]
        assert combined_loss(t64(q), g).item() > base


def test_combined_loss_permutation_invariant():
    rng = np.random.default_rng(2)
    p, g = rng.uniform(0.01, 0.99, (4, 8, 8, 1)), (rng.random((4, 8, 8, 1)) > 0.4).astype(float)
    perm = rng.permutation(p.size)
    a = combined_loss(t64(p), g).item()
    b = combined_loss(t64(p.ravel()[perm]), g.ravel()[perm]).item()
    assert a == pytest.approx(b, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("which", ["bce", "jaccard", "combined"])
def test_loss_gradients(seed, which):
    rng = np.random.default_rng(seed)
    p = t64(rng.uniform(0.05, 0.95, (2, 4, 4, 1)))
    g = (rng.random(p.shape) > 0.5).astype(float)
    fn = {"bce": bce_loss, "jaccard": jaccard_loss, "combined": combined_loss}[which]
    errs = grad_error(lambda: fn(p, g), {"p": p}, rng=rng, max_coords=None, step=1e-6)
    assert errs["p"] < 1e-6


# -- metrics --------------------------------------------------------------------------

def test_confusion_examples():
    gt = np.array([1] * 10 + [0] * 6)
    assert confusion(gt, gt) == ConfusionCounts(10, 6, 0, 0)
    assert confusion(np.ones(8), np.zeros(8)) == ConfusionCounts(0, 0, 8, 0)
    with pytest.raises(ValueError):
        confusion(np.array([0, 2]), np.array([0, 1]))
    with pytest.raises(ValueError):
        confusion(np.zeros(3), np.zeros(4))


def test_metric_examples():
    r = metrics(ConfusionCounts(tp=6, tn=6, fp=2, fn=2))
    assert (r.jaccard, r.dice, r.accuracy, r.sensitivity, r.specificity) == (0.6, 0.75, 0.75, 0.75, 0.75)
    assert not r.degenerate
    perfect = metrics(confusion(np.array([1, 0, 1]), np.array([1, 0, 1])))
    assert all(getattr(perfect, k) == 1.0 for k in ("jaccard", "dice", "accuracy", "sensitivity", "specificity"))
    empty = metrics(ConfusionCounts(0, 16, 0, 0))
    assert empty.jaccard == empty.dice == empty.sensitivity == 1.0
    assert set(empty.degenerate) == {"jaccard", "dice", "sensitivity"}


def test_brute_force_oracle_and_dice_identity():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        pred = rng.random((16, 16)) < rng.random()
        gt = rng.random((16, 16)) < rng.random()
        c = confusion(pred.astype(np.uint8), gt.astype(np.uint8))
        tp, tn, fp, fn = brute_counts(pred, gt)
        assert (c.tp, c.tn, c.fp, c.fn) == (tp, tn, fp, fn)
        r = metrics(c)
        assert r.jaccard == (tp / (tp + fp + fn) if tp + fp + fn else 1.0)
        assert r.accuracy == (tp + tn) / 256
        if tp + fp + fn:
            assert abs(r.dice - 2 * r.jaccard / (1 + r.jaccard)) <= 1e-12
        for k in ("jaccard", "dice", "accuracy", "sensitivity", "specificity"):
            assert 0.0 <= getattr(r, k) <= 1.0


def test_aggregation_modes():
    counts = [ConfusionCounts(6, 6, 2, 2), ConfusionCounts(1, 10, 0, 5)]
    per = aggregate(counts)
    assert per.jaccard == pytest.approx((0.6 + 1 / 6) / 2)
    assert per.n_images == 2 and per.aggregation == "per-image"
    micro = aggregate(counts, "micro")
    assert micro.jaccard == pytest.approx(7 / (7 + 2 + 7))
    with pytest.raises(ValueError):
        aggregate(counts, "macro")
    with pytest.raises(ValueError):
        aggregate([])


def test_report_json_fields():
    rep = aggregate([ConfusionCounts(6, 6, 2, 2)], loss_bce=0.3, loss_jaccard=0.2)
    d = json.loads(rep.to_json())
    for key in ("jaccard", "dice", "accuracy", "sensitivity", "specificity", "loss_bce", "loss_jaccard", "n_images"):
        assert key in d
    assert d["schema"] == "lssfnet.metrics/1"
