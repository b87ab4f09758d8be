"""Built-in photometric feature extractors and similarity maps.

The neural extractors whose outputs this package can ingest (any channel
count, see load_raster) are replaced at desk scale by two built-ins:

* ``rgb``: per-channel standardization of the image.
* ``grad_census``: 8-channel descriptor of Sobel gradients plus a 6-bit soft
  census, each channel standardized.  Both are exactly invariant to
  positive-gain affine photometric transforms, which is what makes the
  plane sweep usable across radiometrically inconsistent views.
"""

import numpy as np
from scipy import ndimage

from .errors import BadChannelCount, ShapeMismatch
from .raster import RasterF32, same_shape

_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64) / 8.0
_SOBEL_Y = _SOBEL_X.T

# census probes: 4 edge neighbors + 2 diagonals of the 3x3 window
_CENSUS_OFFSETS = ((-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (1, 1))

_VAR_EPS = 1e-12


def _standardize(channel, valid):
    vals = channel[valid]
    if vals.size == 0:
        return np.zeros_like(channel)
    mean = vals.mean()
    var = vals.var()
    if var < _VAR_EPS:
        # constant input maps to zero rather than NaN
        return channel - mean
    return (channel - mean) / np.sqrt(var)


def extract_builtin(image: RasterF32, kind: str = "grad_census") -> RasterF32:
    if image.channels not in (1, 3):
        raise BadChannelCount(f"expected 1 or 3 channels, got {image.channels}")
    valid = image.valid_mask()
    data = image.data.astype(np.float64)

    if kind == "rgb":
        out = np.stack(
            [_standardize(data[:, :, c], valid) for c in range(image.channels)], axis=-1
        )
        return RasterF32(out.astype(np.float32), image.valid)

    if kind == "grad_census":
        lum = data.mean(axis=2)
        gx = ndimage.convolve(lum, _SOBEL_X, mode="reflect")
        gy = ndimage.convolve(lum, _SOBEL_Y, mode="reflect")
        sigma = max(float(np.sqrt(lum[valid].var())) if valid.any() else 0.0, 1e-9)
        channels = [gx, gy]
        padded = np.pad(lum, 1, mode="reflect")
        for dr, dc in _CENSUS_OFFSETS:
            nb = padded[1 + dr: 1 + dr + lum.shape[0], 1 + dc: 1 + dc + lum.shape[1]]
            channels.append(np.tanh((nb - lum) / (0.5 * sigma)))
        out = np.stack([_standardize(ch, valid) for ch in channels], axis=-1)
        return RasterF32(out.astype(np.float32), image.valid)

    raise ValueError(f"unknown feature kind {kind!r}")


def cosine_map(a: RasterF32, b: RasterF32) -> RasterF32:
    """Per-pixel cosine similarity of two feature rasters, in [-1, 1]."""
    same_shape(a, b)
    ad = a.data.astype(np.float64)
    bd = b.data.astype(np.float64)
    dot = np.einsum("ijc,ijc->ij", ad, bd)
    na = np.sqrt(np.einsum("ijc,ijc->ij", ad, ad))
    nb = np.sqrt(np.einsum("ijc,ijc->ij", bd, bd))
    norm_ok = (na >= 1e-12) & (nb >= 1e-12)
    denom = np.where(norm_ok, na * nb, 1.0)
    cos = np.clip(dot / denom, -1.0, 1.0)
    valid = a.valid_mask() & b.valid_mask() & norm_ok
    return RasterF32(cos.astype(np.float32)[:, :, None], valid)
