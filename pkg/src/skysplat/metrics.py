"""DSM and image evaluation: MAE, RMSE, PAG thresholds, PSNR."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .aggregation import DsmGrid
from .errors import GridMismatch, NoComparableCells, ShapeMismatch
from .raster import RasterF32, same_shape

logger = logging.getLogger(__name__)

PAG_THRESHOLDS_DEFAULT = (2.5, 7.5)


@dataclass
class DsmReport:
    mae: float
    rmse: float
    pag: dict = field(default_factory=dict)  # threshold (m) -> percentage
    n_cells: int = 0
    n_excluded: int = 0

    def to_dict(self) -> dict:
        return {"mae": self.mae, "rmse": self.rmse,
                "pag": {f"{t:g}": v for t, v in self.pag.items()},
                "n_cells": self.n_cells, "n_excluded": self.n_excluded}


def _grids_aligned(pred: DsmGrid, gt: DsmGrid) -> bool:
    return (pred.heights.shape == gt.heights.shape
            and math.isclose(pred.cell_size, gt.cell_size, rel_tol=1e-9)
            and abs(pred.origin[0] - gt.origin[0]) < 1e-9
            and abs(pred.origin[1] - gt.origin[1]) < 1e-9
            and abs(pred.x0 - gt.x0) < 1e-6 and abs(pred.y0 - gt.y0) < 1e-6)


def _resample_nearest(pred: DsmGrid, gt: DsmGrid) -> np.ndarray:
    """Nearest-neighbor resample of pred heights onto the gt grid."""
    rr, cc = np.meshgrid(np.arange(gt.rows), np.arange(gt.cols), indexing="ij")
    # gt cell centers in pred's flat frame (shared geodetic anchor assumed close)
    x = gt.x0 + cc * gt.cell_size
    y = gt.y0 - rr * gt.cell_size
    pc = np.round((x - pred.x0) / pred.cell_size).astype(np.int64)
    pr = np.round((pred.y0 - y) / pred.cell_size).astype(np.int64)
    inb = (pr >= 0) & (pr < pred.rows) & (pc >= 0) & (pc < pred.cols)
    out = np.full((gt.rows, gt.cols), pred.nodata)
    out[inb] = pred.heights[pr[inb], pc[inb]]
    return out


def dsm_metrics(pred: DsmGrid, gt: DsmGrid, thresholds=PAG_THRESHOLDS_DEFAULT,
                exclude: np.ndarray = None, allow_resample: bool = True,
                remove_median_bias: bool = False) -> DsmReport:
    """Elevation error statistics over cells where both grids carry data.

    PAG_t is the percentage of compared cells with absolute error strictly
    below t meters.  ``exclude`` (True = drop, e.g. a water mask) removes
    cells from the statistics; ``remove_median_bias`` subtracts the median
    error first and is a non-default diagnostic.
    """
    if _grids_aligned(pred, gt):
        ph = pred.heights
        pmask = pred.data_mask()
    elif allow_resample:
        logger.warning("DSM grids are not co-registered; resampling prediction "
                       "by nearest neighbor onto the ground-truth grid")
        ph = _resample_nearest(pred, gt)
        pmask = ph != pred.nodata
    else:
        raise GridMismatch("grids differ and resampling is disabled")

    both = pmask & gt.data_mask()
    n_excluded = 0
    if exclude is not None:
        exclude = np.asarray(exclude, bool)
        if exclude.shape != both.shape:
            raise GridMismatch(f"exclusion mask shape {exclude.shape} != grid {both.shape}")
        n_excluded = int((both & exclude).sum())
        both = both & ~exclude
    n = int(both.sum())
    if n == 0:
        raise NoComparableCells("no cell is comparable between the grids")

    err = ph[both].astype(np.float64) - gt.heights[both].astype(np.float64)
    if remove_median_bias:
        err = err - np.median(err)
    ae = np.abs(err)
    mae = float(ae.mean())
    rmse = float(np.sqrt((err ** 2).mean()))
    pag = {float(t): 100.0 * float((ae < t).sum()) / n for t in thresholds}
    report = DsmReport(mae=mae, rmse=rmse, pag=pag, n_cells=n, n_excluded=n_excluded)
    assert report.rmse >= report.mae - 1e-12
    return report


def psnr(a: RasterF32, b: RasterF32, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); +inf for identical images."""
    same_shape(a, b)
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    mse = float((diff ** 2).mean())
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))
