import numpy as np
import pytest
from scipy import ndimage

from skysplat.errors import BadChannelCount, ShapeMismatch
from skysplat.features import cosine_map, extract_builtin
from skysplat.raster import RasterF32

rng = np.random.default_rng(7)


def _random_rgb(h=24, w=24):
    return RasterF32(rng.uniform(0.05, 0.95, (h, w, 3)).astype(np.float32))


# ---------------------------------------------------------------------------
# extract_builtin
# ---------------------------------------------------------------------------

def test_constant_image_maps_to_zero_features():
    img = RasterF32(np.full((16, 16, 3), 0.5, np.float32))
    for kind in ("rgb", "grad_census"):
        f = extract_builtin(img, kind)
        assert np.allclose(f.data, 0.0)


def test_rgb_features_standardized():
    f = extract_builtin(_random_rgb(), "rgb")
    for c in range(3):
        ch = f.plane(c).astype(np.float64)
        assert abs(ch.mean()) < 1e-5
        assert abs(ch.var() - 1.0) < 1e-4


def test_grad_census_channel_count():
    f = extract_builtin(_random_rgb(), "grad_census")
    assert f.channels == 8


@pytest.mark.parametrize("kind", ["rgb", "grad_census"])
def test_affine_photometric_invariance(kind):
    img = _random_rgb()
    shifted = RasterF32(np.clip(img.data * 2.0 + 0.1, None, None))
    a = extract_builtin(img, kind)
    b = extract_builtin(shifted, kind)
    assert np.max(np.abs(a.data - b.data)) < 1e-4


def test_sobel_gradient_oracle_on_ramp():
    # luminance = 0.1 * column index -> constant x-gradient, zero y-gradient
    h = w = 20
    lum = np.tile(0.1 * np.arange(w, dtype=np.float64), (h, 1))
    img = RasterF32(np.repeat(lum[:, :, None], 3, axis=2).astype(np.float32))
    gx = ndimage.convolve(lum, np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]) / 8.0,
                          mode="reflect")
    f = extract_builtin(img, "grad_census")
    fx = f.plane(0).astype(np.float64)
    expect = (gx - gx.mean()) / np.sqrt(gx.var())
    assert np.max(np.abs(fx - expect)) < 1e-4
    # y-gradient channel is identically zero after standardization
    assert np.allclose(f.plane(1), 0.0, atol=1e-5)


def test_bad_channel_count():
    with pytest.raises(BadChannelCount):
        extract_builtin(RasterF32(np.zeros((4, 4, 2), np.float32)))


def test_unknown_kind():
    with pytest.raises(ValueError):
        extract_builtin(_random_rgb(), "vgg")


def test_invalid_pixels_excluded_from_statistics():
    data = np.full((8, 8, 1), 1.0, np.float32)
    data[0, 0, 0] = 1000.0
    valid = np.ones((8, 8), bool)
    valid[0, 0] = False
    f = extract_builtin(RasterF32(data, valid), "rgb")
    # statistics over valid pixels only: constant there -> zero features
    assert np.allclose(f.data[valid], 0.0)


# ---------------------------------------------------------------------------
# cosine_map
# ---------------------------------------------------------------------------

def test_cosine_self_similarity_is_one():
    f = extract_builtin(_random_rgb(), "grad_census")
    cos = cosine_map(f, f)
    assert np.allclose(cos.data[cos.valid_mask()], 1.0, atol=1e-6)


def test_cosine_negated_is_minus_one():
    f = extract_builtin(_random_rgb(), "grad_census")
    neg = RasterF32(-f.data)
    cos = cosine_map(f, neg)
    assert np.allclose(cos.data[cos.valid_mask()], -1.0, atol=1e-6)


def test_cosine_scalar_oracle():
    a = rng.normal(size=(4, 4, 8)).astype(np.float32)
    b = rng.normal(size=(4, 4, 8)).astype(np.float32)
    cos = cosine_map(RasterF32(a), RasterF32(b))
    for i in range(4):
        for j in range(4):
            va, vb = a[i, j].astype(np.float64), b[i, j].astype(np.float64)
            expect = va @ vb / (np.linalg.norm(va) * np.linalg.norm(vb))
            assert cos.plane(0)[i, j] == pytest.approx(expect, abs=1e-6)


def test_cosine_zero_vector_invalid():
    a = np.ones((2, 2, 3), np.float32)
    b = np.ones((2, 2, 3), np.float32)
    b[0, 0] = 0.0
    cos = cosine_map(RasterF32(a), RasterF32(b))
    assert not cos.valid_mask()[0, 0]
    assert cos.valid_mask()[1, 1]


def test_cosine_scale_invariance():
    f = extract_builtin(_random_rgb(), "grad_census")
    g = extract_builtin(_random_rgb(), "grad_census")
    scaled = RasterF32(3.7 * g.data)
    assert np.allclose(cosine_map(f, g).data, cosine_map(f, scaled).data, atol=1e-5)


def test_cosine_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        cosine_map(RasterF32(np.zeros((4, 4, 3))), RasterF32(np.zeros((4, 5, 3))))
