import math

import numpy as np
import pytest

from opensetseg.core import ClassSpace
from opensetseg.mixing import (
    MixConfig,
    attach_private,
    blend,
    classmix_mask,
    classmix_target,
    openremix_target,
    paste_patch,
    resize_bilinear,
    resize_thing_patch,
)


@pytest.fixture
def pair():
    rng = np.random.default_rng(0)
    fg = rng.random((6, 5, 3))
    bg = rng.random((6, 5, 3))
    return fg, bg


def test_blend_identities(pair):
    fg, bg = pair
    np.testing.assert_array_equal(blend(np.ones((6, 5), np.uint8), fg, bg), fg)
    np.testing.assert_array_equal(blend(np.zeros((6, 5), np.uint8), fg, bg), bg)


def test_blend_checkerboard():
    fg = np.arange(4).reshape(2, 2)
    bg = np.arange(10, 14).reshape(2, 2)
    mask = np.array([[1, 0], [0, 1]], np.uint8)
    np.testing.assert_array_equal(blend(mask, fg, bg), [[0, 11], [12, 3]])


def test_blend_idempotent(pair):
    fg, bg = pair
    m = (np.random.default_rng(1).random((6, 5)) < 0.5).astype(np.uint8)
    once = blend(m, fg, bg)
    np.testing.assert_array_equal(blend(m, once, bg), once)


def test_blend_shape_mismatch():
    with pytest.raises(ValueError):
        blend(np.ones((2, 2), np.uint8), np.zeros((2, 3)), np.zeros((2, 3)))


def test_classmix_single_class():
    lbl = np.full((4, 4), 2, np.uint8)
    lbl[0, 0] = 255
    mask, chosen = classmix_mask(lbl, np.random.default_rng(0))
    assert chosen.tolist() == [2]
    np.testing.assert_array_equal(mask, lbl == 2)


def test_classmix_two_classes_both_outcomes():
    lbl = np.array([[0, 0], [1, 1]], np.uint8)
    outcomes = set()
    for seed in range(40):
        mask, chosen = classmix_mask(lbl, np.random.default_rng(seed))
        assert len(chosen) == 1
        np.testing.assert_array_equal(mask, lbl == chosen[0])
        outcomes.add(int(chosen[0]))
    assert outcomes == {0, 1}


def test_classmix_half_of_the_classes():
    rng = np.random.default_rng(3)
    for k in range(1, 8):
        lbl = rng.integers(0, k, size=(12, 12)).astype(np.uint8)
        lbl[:k] = np.arange(k)[:, None]  # every class present
        lbl[-1, -1] = 255
        mask, chosen = classmix_mask(lbl, rng)
        assert len(chosen) == math.ceil(k / 2)
        expected = np.array([[int(v in set(chosen.tolist())) for v in row] for row in lbl])
        np.testing.assert_array_equal(mask, expected)


def test_classmix_empty_label():
    with pytest.raises(ValueError):
        classmix_mask(np.full((3, 3), 255, np.uint8), np.random.default_rng(0))


def test_resize_patch_dimensions_and_identity():
    rng = np.random.default_rng(0)
    img = rng.random((10, 10, 3))
    lbl = np.zeros((10, 10), np.uint8)
    lbl[2:6, 3:7] = 1
    patch = resize_thing_patch(img, lbl, 1, 0.5, rng)
    assert patch.image.shape == (2, 2, 3) and patch.mask.shape == (2, 2)
    assert patch.mask.all()
    same = resize_thing_patch(img, lbl, 1, 1.0, rng)
    np.testing.assert_array_equal(same.image, img[2:6, 3:7])
    np.testing.assert_array_equal(same.mask, np.ones((4, 4)))


def test_bilinear_half_scale_is_2x2_average():
    # half-pixel centres at scale 0.5 land exactly between source pixels
    rng = np.random.default_rng(1)
    img = rng.random((8, 6, 3))
    out = resize_bilinear(img, 4, 3)
    oracle = img.reshape(4, 2, 3, 2, 3).mean(axis=(1, 3))
    np.testing.assert_allclose(out, oracle, atol=1e-14)


def test_resize_patch_fits_and_absent_cases():
    rng = np.random.default_rng(2)
    img = rng.random((8, 8, 3))
    lbl = np.ones((8, 8), np.uint8)
    assert resize_thing_patch(img, lbl, 1, 2.0, rng) is None
    with pytest.raises(ValueError):
        resize_thing_patch(img, lbl, 3, 0.5, rng)
    for _ in range(50):
        p = resize_thing_patch(img, lbl, 1, 0.5, rng, frame_shape=(10, 9))
        assert 0 <= p.origin[0] <= 6 and 0 <= p.origin[1] <= 5


def _scene():
    rng = np.random.default_rng(4)
    src_img, tgt_img = rng.random((16, 16, 3)), rng.random((16, 16, 3))
    src_lbl = np.zeros((16, 16), np.uint8)
    src_lbl[8:] = 1
    src_lbl[2:8, 2:8] = 2
    src_lbl[10:14, 9:15] = 3
    src_lbl[0, :] = 255
    tgt_lbl = rng.integers(0, 5, size=(16, 16)).astype(np.uint8)
    return (src_img, src_lbl), (tgt_img, tgt_lbl)


def test_openremix_equals_composed_oracle():
    source, target = _scene()
    cfg = MixConfig(0.5, frozenset({2, 3}))
    mixed = openremix_target(source, target, cfg, np.random.default_rng(9))

    rng = np.random.default_rng(9)
    mask, chosen = classmix_mask(source[1], rng)
    img = blend(mask, source[0], target[0])
    lbl = blend(mask, source[1], target[1])
    pool = [c for c in (2, 3) if c not in chosen.tolist()] or [2, 3]
    cls = pool[int(rng.integers(0, len(pool)))]
    patch = resize_thing_patch(source[0], source[1], cls, 0.5, rng)
    img, lbl, pasted = paste_patch(img, lbl, patch, cls)
    np.testing.assert_array_equal(mixed.image, img)
    np.testing.assert_array_equal(mixed.label, lbl)
    np.testing.assert_array_equal(mixed.origin_mask, mask | pasted)


def test_openremix_reproducible():
    source, target = _scene()
    cfg = MixConfig(0.5, frozenset({2, 3}))
    a = openremix_target(source, target, cfg, np.random.default_rng(1))
    b = openremix_target(source, target, cfg, np.random.default_rng(1))
    for x, y in zip(a, b):
        assert x.tobytes() == y.tobytes()


def test_openremix_without_things_is_classmix():
    source, target = _scene()
    mixed = openremix_target(source, target, MixConfig(0.5, frozenset()), np.random.default_rng(5))
    plain, _ = classmix_target(source, target, np.random.default_rng(5))
    for x, y in zip(mixed, plain):
        np.testing.assert_array_equal(x, y)


def test_degenerate_mix_returns_target():
    # an all-ignore source except one class that covers zero pixels of the
    # mask is impossible, so check blend with an all-zero mask directly
    source, target = _scene()
    np.testing.assert_array_equal(blend(np.zeros((16, 16), np.uint8), source[0], target[0]), target[0])
    np.testing.assert_array_equal(blend(np.zeros((16, 16), np.uint8), source[1], target[1]), target[1])


def test_attach_private_identities_and_oracle():
    cs = ClassSpace(3)
    source, target = _scene()
    src = (source[0], np.minimum(source[1], 2))
    tgt = (target[0], np.minimum(target[1], cs.unknown_id))
    zeros = np.zeros((16, 16), np.uint8)
    out = attach_private(src, tgt, zeros)
    assert out.image.tobytes() == src[0].tobytes() and out.label.tobytes() == src[1].tobytes()
    out = attach_private(src, tgt, zeros + 1)
    assert out.image.tobytes() == tgt[0].tobytes() and out.label.tobytes() == tgt[1].tobytes()

    m = (tgt[1] == cs.unknown_id).astype(np.uint8)
    out = attach_private(src, tgt, m)
    for y in range(16):
        for x in range(16):
            if m[y, x]:
                assert out.label[y, x] == cs.unknown_id
                np.testing.assert_array_equal(out.image[y, x], tgt[0][y, x])
            else:
                assert out.label[y, x] == src[1][y, x]
                np.testing.assert_array_equal(out.image[y, x], src[0][y, x])
    np.testing.assert_array_equal(out.origin_mask, m)


def test_mix_config_validation():
    with pytest.raises(ValueError):
        MixConfig(0.0)
    with pytest.raises(ValueError):
        MixConfig(0.5, frozenset({5})).validate(3)
