import numpy as np
import pytest

from skysplat import cscm
from skysplat.errors import NoOverlap
from skysplat.raster import RasterF32

rng = np.random.default_rng(21)


def _conf(values, valid=None):
    arr = np.asarray(values, np.float32)[:, :, None]
    return RasterF32(arr, valid)


# ---------------------------------------------------------------------------
# confidence mapping
# ---------------------------------------------------------------------------

def test_confidence_from_cosine_exact_values():
    cos = _conf([[1.0, 0.75], [0.5, 0.0]])
    q = cscm.confidence_from_cosine(cos)
    assert np.allclose(q.plane(0), [[1.0, 0.5], [0.0, 0.0]])


def test_confidence_negative_cosine_clamps_to_zero():
    q = cscm.confidence_from_cosine(_conf([[-1.0]]))
    assert float(q.plane(0)[0, 0]) == 0.0


def test_confidence_preserves_validity():
    valid = np.array([[True, False]])
    q = cscm.confidence_from_cosine(_conf([[0.9, 0.9]], valid))
    assert np.array_equal(q.valid_mask(), valid)


def test_mean_confidence_over_valid_maps():
    a = _conf([[0.8, 0.4]], np.array([[True, True]]))
    b = _conf([[0.2, 0.0]], np.array([[True, False]]))
    q = cscm.mean_confidence([a, b])
    assert q.plane(0)[0, 0] == pytest.approx(0.5)
    assert q.plane(0)[0, 1] == pytest.approx(0.4)  # only map a contributes
    assert q.valid_mask().all()


def test_mean_confidence_no_valid_map_invalid():
    a = _conf([[0.8]], np.array([[False]]))
    q = cscm.mean_confidence([a])
    assert not q.valid_mask()[0, 0]


def test_cross_view_identical_features_full_confidence():
    f = RasterF32(rng.normal(size=(6, 6, 8)).astype(np.float32))
    q = cscm.cross_view_confidence(f, f)
    assert np.allclose(q.plane(0)[q.valid_mask()], 1.0, atol=1e-6)


def test_self_view_orthogonal_features_zero_confidence():
    a = np.zeros((2, 2, 2), np.float32)
    b = np.zeros((2, 2, 2), np.float32)
    a[:, :, 0] = 1.0
    b[:, :, 1] = 1.0
    q = cscm.self_view_confidence(RasterF32(a), RasterF32(b))
    assert np.allclose(q.plane(0), 0.0)


# ---------------------------------------------------------------------------
# calibration and fusion
# ---------------------------------------------------------------------------

def test_calibration_mean_ratio_hand_case():
    # cross-view mean 0.6, self-view mean 0.3 over the joint region -> r = 2.0;
    # a hole with self-view 0.3 fills as 0.6
    cv_valid = np.array([[True, True, False]])
    q_cv = _conf([[0.8, 0.4, 0.0]], cv_valid)
    q_sv = _conf([[0.4, 0.2, 0.3]])
    fused = cscm.calibrate_and_fuse(q_cv, q_sv)
    assert fused.plane(0)[0, 0] == pytest.approx(0.8)
    assert fused.plane(0)[0, 1] == pytest.approx(0.4)
    assert fused.plane(0)[0, 2] == pytest.approx(0.6)
    assert fused.valid_mask().all()


def test_calibration_clamps_filled_values_to_one():
    q_cv = _conf([[0.9, 0.0]], np.array([[True, False]]))
    q_sv = _conf([[0.1, 0.9]])
    fused = cscm.calibrate_and_fuse(q_cv, q_sv)  # r = 9 -> 8.1 clamps to 1
    assert fused.plane(0)[0, 1] == pytest.approx(1.0)


def test_calibration_unit_ratio_fills_with_self_view():
    # q_sv equals q_cv wherever both are valid -> r = 1, and the invalid half
    # is filled with q_sv verbatim
    vals = rng.uniform(0.1, 0.9, (4, 8)).astype(np.float32)
    cv_valid = np.zeros((4, 8), bool)
    cv_valid[:, :4] = True
    q_cv = _conf(np.where(cv_valid, vals, 0.0), cv_valid)
    q_sv = _conf(vals)
    fused = cscm.calibrate_and_fuse(q_cv, q_sv)
    assert np.allclose(fused.plane(0), vals, atol=1e-6)


def test_calibration_no_overlap_raises():
    q_cv = _conf([[0.5, 0.5]], np.array([[True, False]]))
    q_sv = _conf([[0.5, 0.5]], np.array([[False, True]]))
    with pytest.raises(NoOverlap):
        cscm.calibrate_and_fuse(q_cv, q_sv)


def test_calibration_idempotent_when_cv_covers_everything():
    q_cv = _conf(rng.uniform(0, 1, (4, 4)).astype(np.float32))
    q_sv = _conf(rng.uniform(0, 1, (4, 4)).astype(np.float32))
    fused = cscm.calibrate_and_fuse(q_cv, q_sv)
    assert np.allclose(fused.plane(0), q_cv.plane(0))


# ---------------------------------------------------------------------------
# binarization
# ---------------------------------------------------------------------------

def test_binarize_boundary_inclusive():
    q = _conf([[0.2, 0.19, 0.21]])
    mask = cscm.binarize(q, 0.2)
    assert mask[0, 0] and not mask[0, 1] and mask[0, 2]


def test_binarize_invalid_defaults_to_stable():
    q = _conf([[0.0]], np.array([[False]]))
    assert cscm.binarize(q, 0.2)[0, 0]


def test_binarize_tau_out_of_range():
    with pytest.raises(ValueError):
        cscm.binarize(_conf([[0.5]]), 1.5)


def test_binarize_idempotent_through_mask_raster():
    q = _conf(rng.uniform(0, 1, (6, 6)).astype(np.float32))
    mask = cscm.binarize(q, 0.2)
    r = cscm.mask_to_raster(mask)
    again = cscm.binarize(r, 0.5)
    assert np.array_equal(mask, again)
