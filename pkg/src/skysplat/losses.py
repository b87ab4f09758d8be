"""Self-supervised loss terms: Pearson relative-height loss and mask-guided
photometric loss."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .errors import EmptyMask, TooFewPixels
from .raster import RasterF32, same_shape


@dataclass
class LossReport:
    hei_corr: float
    l_hei: float
    l_rgb_mse: float
    l_total: float
    n_pixels_used: int

    def to_dict(self) -> dict:
        return asdict(self)


def pearson_height_loss(h_rel: RasterF32, h_pred: RasterF32):
    """Pearson correlation between a relative and a predicted height map.

    Returns (r, l_hei) with l_hei = 1 - r.  Either map may be in arbitrary
    affine units; the correlation is scale- and shift-invariant.  Statistics
    run over jointly-valid pixels; zero variance in either map yields r = 0.
    """
    same_shape(h_rel, h_pred)
    both = h_rel.valid_mask() & h_pred.valid_mask()
    n = int(both.sum())
    if n < 2:
        raise TooFewPixels(f"need >= 2 jointly-valid pixels, got {n}")
    a = h_rel.plane(0).astype(np.float64)[both]
    b = h_pred.plane(0).astype(np.float64)[both]
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).mean() * (b * b).mean())
    r = float((a * b).mean() / denom) if denom > 1e-300 else 0.0
    r = min(max(r, -1.0), 1.0)
    return r, 1.0 - r


def masked_photometric(render: RasterF32, gt: RasterF32, stable_mask: np.ndarray,
                       perceptual=None) -> float:
    """Mean squared RGB error over stable (mask-true) pixels.

    ``perceptual`` is an optional hook called as perceptual(render, gt,
    stable_mask) whose scalar result is added; it defaults to off.
    """
    same_shape(render, gt)
    stable = np.asarray(stable_mask, bool)
    if stable.shape != (render.height, render.width):
        raise EmptyMask(f"mask shape {stable.shape} does not match rasters")
    if not stable.any():
        raise EmptyMask("no stable pixel to supervise")
    diff = render.data.astype(np.float64) - gt.data.astype(np.float64)
    mse = float((diff[stable] ** 2).mean())
    if perceptual is not None:
        mse += float(perceptual(render, gt, stable))
    return mse


def total_loss(l_rgb: float, l_hei: float, hei_weight: float = 1.0) -> float:
    return float(l_rgb + hei_weight * l_hei)


def loss_report(h_rel: RasterF32, h_pred: RasterF32, render: RasterF32, gt: RasterF32,
                stable_mask: np.ndarray, hei_weight: float = 1.0) -> LossReport:
    r, l_hei = pearson_height_loss(h_rel, h_pred)
    l_rgb = masked_photometric(render, gt, stable_mask)
    n = int((h_rel.valid_mask() & h_pred.valid_mask()).sum())
    return LossReport(hei_corr=r, l_hei=l_hei, l_rgb_mse=l_rgb,
                      l_total=total_loss(l_rgb, l_hei, hei_weight), n_pixels_used=n)
