import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from postdae.errors import DegeneratePatch, InvalidConfig
from postdae.texture import (
    HARALICK_NAMES,
    GLCMConfig,
    glcm,
    haralick_features,
    image_features,
    offset_step,
    pixel_features,
    quantize,
)

patches = st.tuples(st.integers(2, 7), st.integers(2, 7), st.integers(2, 6)).flatmap(
    lambda s: st.tuples(arrays(np.int64, s[:2], elements=st.integers(0, s[2] - 1)), st.just(s[2])))


def test_glcm_small_example():
    patch = np.array([[0, 0, 1], [1, 2, 2]])
    m = glcm(patch, (1, 0), 3)
    # horizontal pairs: (0,0) (0,1) (1,2) (2,2), each counted both ways
    expected = np.array([[2, 1, 0], [1, 0, 1], [0, 1, 2]]) / 8
    np.testing.assert_allclose(m, expected)


@given(patches, st.sampled_from([0, 45, 90, 135]))
def test_glcm_matches_pair_enumeration(pl, angle):
    patch, levels = pl
    dy, dx = offset_step(1, angle)
    if abs(dy) >= patch.shape[0] or abs(dx) >= patch.shape[1]:
        return
    m = glcm(patch, (1, angle), levels)
    np.testing.assert_allclose(m, oracles.glcm(patch.tolist(), dy, dx, levels), atol=1e-15)
    np.testing.assert_allclose(m, m.T)
    assert m.sum() == pytest.approx(1.0)


@given(patches)
def test_haralick_matches_direct_summation(pl):
    patch, levels = pl
    m = glcm(patch, (1, 0), levels)
    got = haralick_features(m)
    assert got.shape == (13,) and np.all(np.isfinite(got))
    np.testing.assert_allclose(got, oracles.haralick(m.tolist()), rtol=1e-9, atol=1e-9)


def test_haralick_batched_matches_single(rng):
    ms = np.stack([glcm(rng.integers(0, 5, (6, 6)), (1, 45), 5) for _ in range(4)])
    batch = haralick_features(ms)
    for i in range(4):
        np.testing.assert_allclose(batch[i], haralick_features(ms[i]))


def test_constant_patch_is_finite():
    f = haralick_features(glcm(np.full((5, 5), 3), (1, 0), 8))
    assert np.all(np.isfinite(f))
    assert f[HARALICK_NAMES.index("energy")] == 1.0
    assert f[HARALICK_NAMES.index("correlation")] == 1.0
    assert f[HARALICK_NAMES.index("contrast")] == 0.0


def test_degenerate_patches():
    with pytest.raises(DegeneratePatch):
        glcm(np.zeros((1, 1), int), (1, 0), 2)
    with pytest.raises(DegeneratePatch):
        glcm(np.zeros(4, int), (1, 0), 2)
    with pytest.raises(ValueError):
        glcm(np.array([[0, 5]]), (1, 0), 3)
    with pytest.raises(ValueError):
        offset_step(1, 30)


def test_quantize_bins():
    assert quantize(np.array([0.0, 0.49, 0.5, 1.0]), 2).tolist() == [0, 0, 1, 1]


def test_pixel_features_layout(rng):
    image = rng.random((20, 20))
    cfg = GLCMConfig(patch_size=5, gray_levels=8)
    feats = pixel_features(image, [(10, 10), (0, 0)], cfg)
    assert feats.shape == (2, cfg.n_features) == (2, 54)
    window = image[8:13, 8:13]
    assert feats[0, 0] == pytest.approx(window.mean())
    assert feats[0, 1] == pytest.approx(window.std())
    q = quantize(window, 8)
    np.testing.assert_allclose(feats[0, 2:15], haralick_features(glcm(q, (1, 0), 8)))
    full = image_features(image, cfg, chunk=37)
    np.testing.assert_allclose(full[10 * 20 + 10], feats[0])
    np.testing.assert_allclose(full[0], feats[1])


def test_config_validation():
    with pytest.raises(InvalidConfig):
        GLCMConfig(patch_size=4)
    with pytest.raises(InvalidConfig):
        GLCMConfig(gray_levels=1)
    with pytest.raises(ValueError):
        GLCMConfig(offsets=((1, 10),))
    assert GLCMConfig(**GLCMConfig().to_dict()) == GLCMConfig()


def test_constant_two_by_two_patch():
    m = glcm(np.full((2, 2), 2), (1, 0), 4)
    # both horizontal pairs are (2, 2)
    expected = np.zeros((4, 4))
    expected[2, 2] = 1.0
    np.testing.assert_array_equal(m, expected)


def test_checkerboard_mass_is_off_diagonal():
    board = np.indices((6, 6)).sum(axis=0) % 2
    m = glcm(board, (1, 0), 2)
    np.testing.assert_allclose(m, [[0, 0.5], [0.5, 0]])


@pytest.mark.parametrize("k", [2, 3, 8])
def test_uniform_matrix_energy(k):
    f = haralick_features(np.full((k, k), 1.0 / k**2))
    assert f[HARALICK_NAMES.index("energy")] == pytest.approx(1.0 / k**2)


def test_constant_patch_entropy_is_zero():
    f = haralick_features(glcm(np.full((4, 4), 1), (1, 90), 4))
    assert f[HARALICK_NAMES.index("entropy")] == pytest.approx(0.0, abs=1e-12)
