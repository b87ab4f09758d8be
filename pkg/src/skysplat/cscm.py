"""Cross-Self Consistency Module: confidence maps from feature similarity,
scale calibration, fusion, and binary transient masking.

Confidence is max(2*cos - 1, 0): cosine similarities below 0.5 carry zero
confidence.  The cross-view map covers pixels with a valid warp (and,
in the pipeline, pixels passing the geometric consistency filter); holes are
filled from a self-view map computed against rendered features, rescaled by
the mean ratio over the common valid region.
"""

import numpy as np

from .errors import NoOverlap
from .features import cosine_map
from .raster import RasterF32, same_shape

TAU_DEFAULT = 0.2


def confidence_from_cosine(cos: RasterF32) -> RasterF32:
    q = np.maximum(2.0 * cos.data.astype(np.float64) - 1.0, 0.0)
    return RasterF32(q.astype(np.float32), cos.valid)


def cross_view_confidence(feat_ref: RasterF32, feat_warped: RasterF32) -> RasterF32:
    return confidence_from_cosine(cosine_map(feat_ref, feat_warped))


def self_view_confidence(feat_ref: RasterF32, feat_rendered: RasterF32) -> RasterF32:
    return confidence_from_cosine(cosine_map(feat_ref, feat_rendered))


def mean_confidence(maps) -> RasterF32:
    """Per-pixel mean over the confidence maps valid at each pixel.

    Used to aggregate cross-view confidence over several source views.
    """
    maps = list(maps)
    stack = np.stack([m.plane(0).astype(np.float64) for m in maps])
    masks = np.stack([m.valid_mask() for m in maps])
    count = masks.sum(axis=0)
    valid = count >= 1
    q = (stack * masks).sum(axis=0) / np.maximum(count, 1)
    return RasterF32(np.where(valid, q, 0.0).astype(np.float32)[:, :, None], valid)


def calibrate_and_fuse(q_cv: RasterF32, q_sv: RasterF32) -> RasterF32:
    """Fill invalid cross-view pixels with mean-ratio-calibrated self-view
    confidence, clamped to [0, 1]."""
    same_shape(q_cv, q_sv)
    cv_valid = q_cv.valid_mask()
    sv_valid = q_sv.valid_mask()
    both = cv_valid & sv_valid
    if not both.any():
        raise NoOverlap("no pixel is valid in both confidence maps")
    cv = q_cv.plane(0).astype(np.float64)
    sv = q_sv.plane(0).astype(np.float64)
    r = cv[both].mean() / max(sv[both].mean(), 1e-6)
    fused = np.where(cv_valid, cv, np.clip(r * sv, 0.0, 1.0))
    valid = cv_valid | sv_valid
    fused = np.where(valid, fused, 0.0)
    return RasterF32(fused.astype(np.float32)[:, :, None], valid)


def binarize(q: RasterF32, tau: float = TAU_DEFAULT) -> np.ndarray:
    """Threshold a confidence map into a stable/transient mask.

    True = stable (supervise), False = transient.  Invalid confidence
    defaults to stable so uncertainty never suppresses supervision.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    vals = q.plane(0)
    return (vals >= tau) | ~q.valid_mask()


def mask_to_raster(mask: np.ndarray) -> RasterF32:
    return RasterF32(mask.astype(np.float32)[:, :, None])
