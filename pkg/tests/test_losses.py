import math

import numpy as np
import pytest

from opensetseg.core import ClassSpace
from opensetseg.losses import DeconConfig, LossValue, decon_loss, total_loss, weighted_cross_entropy
from opensetseg.morphology import decon_masks


def central_diff(f, x, h=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f(x)
        x[i] = old - h
        down = f(x)
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-12)


cs4 = ClassSpace(4)


def test_ce_zero_when_peaked():
    logits = np.full((2, 2, 5), -1e3)
    labels = np.array([[0, 1], [4, 2]])
    for (y, x), c in np.ndenumerate(labels):
        logits[y, x, c] = 1e3
    assert weighted_cross_entropy(logits, labels, 1.0, cs4).value == 0.0


def test_ce_uniform_is_log_k():
    lv = weighted_cross_entropy(np.zeros((3, 3, 5)), np.zeros((3, 3), int), 1.0, cs4)
    assert lv.value == pytest.approx(math.log(5), abs=1e-12)
    assert lv.value == pytest.approx(1.6094, abs=1e-4)


def test_ce_zero_weights():
    rng = np.random.default_rng(0)
    lv = weighted_cross_entropy(rng.normal(size=(3, 3, 5)), rng.integers(0, 5, (3, 3)), 0.0, cs4)
    assert lv.value == 0.0 and not lv.grad.any()


def test_ce_ignore_pixels():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(4, 4, 5))
    labels = rng.integers(0, 5, (4, 4))
    labels[0] = 255
    lv = weighted_cross_entropy(logits, labels, 1.0, cs4)
    assert not lv.grad[0].any()
    sub = weighted_cross_entropy(logits[1:], labels[1:], 1.0, cs4)
    assert lv.value == pytest.approx(sub.value, abs=1e-14)


def test_ce_direct_evaluation():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(3, 4, 5))
    labels = rng.integers(0, 5, (3, 4))
    labels[1, 2] = 255
    w = rng.random((3, 4))
    total, n = 0.0, 0
    for (y, x), c in np.ndenumerate(labels):
        if c == 255:
            continue
        row = logits[y, x]
        total += -w[y, x] * (row[c] - math.log(sum(math.exp(v) for v in row)))
        n += 1
    assert weighted_cross_entropy(logits, labels, w, cs4).value == pytest.approx(total / n, rel=1e-12)


def test_ce_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(6, 6, 5))
    labels = rng.integers(0, 5, (6, 6))
    labels[rng.random((6, 6)) < 0.1] = 255
    w = rng.random((6, 6))
    lv = weighted_cross_entropy(logits, labels, w, cs4)
    fd = central_diff(lambda z: weighted_cross_entropy(z, labels, w, cs4).value, logits.copy())
    assert rel_err(lv.grad, fd) <= 1e-5


def test_ce_nonnegative():
    rng = np.random.default_rng(4)
    for _ in range(20):
        lv = weighted_cross_entropy(rng.normal(scale=5, size=(3, 3, 5)), rng.integers(0, 5, (3, 3)), rng.random((3, 3)), cs4)
        assert lv.value >= 0


def test_ce_rejects_out_of_range_label():
    with pytest.raises(ValueError):
        weighted_cross_entropy(np.zeros((1, 1, 5)), np.array([[5]]), 1.0, cs4)
    with pytest.raises(ValueError):
        weighted_cross_entropy(np.zeros((1, 1, 5)), np.array([[1]]), -1.0, cs4)


def decon_oracle(features, pos, neg, tau):
    """Plain re-statement of the loss, one pixel at a time."""
    def unit(v):
        return v / np.linalg.norm(v)

    ps = [unit(features[y, x]) for y, x in zip(*np.nonzero(pos))]
    ns = [unit(features[y, x]) for y, x in zip(*np.nonzero(neg))]
    anchor = unit(sum(ps) / len(ps))
    num = sum(math.exp(float(anchor @ p) / tau) for p in ps)
    den = sum(math.exp(float(anchor @ n) / tau) for n in ns)
    return -math.log(num / den)


def random_decon_case(rng, h=8, w=8, f=4):
    feats = rng.normal(size=(h, w, f))
    m = np.zeros((h, w), np.uint8)
    y, x = rng.integers(0, h - 4), rng.integers(0, w - 4)
    m[y:y + rng.integers(3, 5), x:x + rng.integers(3, 5)] = 1
    m |= (rng.random((h, w)) < 0.15).astype(np.uint8)
    neg, pos = decon_masks(m)
    return feats, pos, neg


def test_decon_single_pair_examples():
    cfg = DeconConfig(temperature=0.5)
    pos = np.array([[1, 0]], np.uint8)
    neg = np.array([[0, 1]], np.uint8)
    same = np.array([[[1.0, 2.0], [2.0, 4.0]]])
    assert decon_loss(same, pos, neg, cfg).value == pytest.approx(0.0, abs=1e-15)
    feats = np.array([[[1.0, 0.0], [0.6, 0.8]]])
    # anchor is the single positive itself: s_p = 1, s_n = 0.6
    assert decon_loss(feats, pos, neg, cfg).value == pytest.approx(-(1.0 - 0.6) / 0.5, abs=1e-12)


def test_decon_matches_oracle_and_finite_differences():
    rng = np.random.default_rng(10)
    cfg = DeconConfig(temperature=0.2)
    for _ in range(10):
        feats, pos, neg = random_decon_case(rng)
        lv = decon_loss(feats, pos, neg, cfg)
        assert not lv.skipped
        assert lv.value == pytest.approx(decon_oracle(feats, pos, neg, 0.2), rel=1e-10, abs=1e-12)
        fd = central_diff(lambda z: decon_loss(z, pos, neg, cfg).value, feats.copy())
        assert rel_err(lv.grad, fd) <= 1e-4
        # only pixels in P or N receive gradient
        assert not lv.grad[(pos == 0) & (neg == 0)].any()


def test_decon_scale_invariance():
    rng = np.random.default_rng(11)
    feats, pos, neg = random_decon_case(rng)
    base = decon_loss(feats, pos, neg).value
    for (y, x) in [(0, 0), tuple(np.argwhere(pos)[0]), tuple(np.argwhere(neg)[0])]:
        scaled = feats.copy()
        scaled[y, x] *= 7.3
        assert decon_loss(scaled, pos, neg).value == pytest.approx(base, abs=1e-9)


def test_decon_skips_empty_sets():
    feats = np.ones((4, 4, 3))
    pos = np.zeros((4, 4), np.uint8)
    neg = np.ones((4, 4), np.uint8)
    lv = decon_loss(feats, pos, neg)
    assert lv.skipped and lv.value == 0.0 and not lv.grad.any()
    lv = decon_loss(feats, neg, pos)
    assert lv.skipped


def test_decon_rejects_bad_temperature():
    with pytest.raises(ValueError):
        DeconConfig(temperature=0.0)


def test_total_loss_combination():
    rng = np.random.default_rng(0)
    parts = [LossValue(float(rng.random()), rng.normal(size=(2, 2))) for _ in range(3)]
    value, grads = total_loss(*parts, 0.0)
    assert value == parts[0].value + parts[1].value
    assert not grads[2].any()
    zero = LossValue(0.0, np.zeros(1))
    assert total_loss(zero, zero, zero, 1.0)[0] == 0.0
    value, grads = total_loss(*parts, 0.3)
    assert value == pytest.approx(parts[0].value + parts[1].value + 0.3 * parts[2].value, abs=1e-15)
    np.testing.assert_array_equal(grads[2], 0.3 * parts[2].grad)
