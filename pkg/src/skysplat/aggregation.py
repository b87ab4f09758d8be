"""Multi-view consistency filtering of per-view height maps and DSM
rasterization by per-cell maximum."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np

from . import geo
from .errors import EmptyPointSet, OutOfFootprint, ViewCountTooSmall
from .cost_volume import bilinear_sample
from .raster import RasterF32
from .rpc import GeoPoint, PixelCoord, RpcModel, localize_grid, project_grid

logger = logging.getLogger(__name__)

DP_MAX_DEFAULT = 3.0   # pixels
DH_MAX_DEFAULT = 0.2   # relative
MIN_AGREE_DEFAULT = 1

# |h_ref(p)| below this switches the relative height check to an absolute one
H_DENOM_MIN = 0.5


@dataclass(frozen=True, slots=True)
class ReliablePoint:
    geo: GeoPoint
    source_view: int
    n_agreeing: int


@dataclass
class DsmGrid:
    """Georeferenced elevation grid over the flat local frame at ``origin``.

    Cell (r, c) is centered at ground coordinates
    (x0 + c*cell_size, y0 - r*cell_size): east increases with columns,
    north decreases with rows.
    """

    origin: tuple       # (lat, lon) geodetic anchor of the flat frame
    x0: float
    y0: float
    cell_size: float
    heights: np.ndarray
    nodata: float = -9999.0

    @property
    def rows(self) -> int:
        return self.heights.shape[0]

    @property
    def cols(self) -> int:
        return self.heights.shape[1]

    def data_mask(self) -> np.ndarray:
        return self.heights != self.nodata

    @classmethod
    def empty(cls, origin, x0, y0, rows, cols, cell_size, nodata=-9999.0) -> "DsmGrid":
        return cls(origin=tuple(origin), x0=float(x0), y0=float(y0),
                   cell_size=float(cell_size),
                   heights=np.full((rows, cols), nodata, dtype=np.float64),
                   nodata=float(nodata))


def _pair_deltas(ref_rpc: RpcModel, src_rpc: RpcModel, h_ref: RasterF32, h_src: RasterF32):
    """Vectorized two-step reprojection deltas of every ref pixel against one
    source view.

    Returns (delta_p, delta_h, ok, lat, lon): ok is False where any step left
    a footprint or failed; lat/lon are the ref-pixel localizations at h_ref.
    """
    h, w = h_ref.height, h_ref.width
    vv, uu = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    hi = h_ref.plane(0).astype(np.float64)
    lat, lon, ok0, _ = localize_grid(ref_rpc, uu, vv, hi)
    qu, qv, okp = project_grid(src_rpc, lat, lon, hi, check_cube=False)
    hj_at_q, oks = bilinear_sample(h_src, qu, qv)
    hj_at_q = hj_at_q[..., 0].astype(np.float64)
    lat2, lon2, ok2, _ = localize_grid(src_rpc, qu, qv, hj_at_q,
                                       init=(lat, lon))
    pu, pv, okb = project_grid(ref_rpc, lat2, lon2, hj_at_q, check_cube=False)
    hi_at_p2, okr = bilinear_sample(h_ref, pu, pv)
    hi_at_p2 = hi_at_p2[..., 0].astype(np.float64)

    delta_p = np.hypot(pu - uu, pv - vv)
    num = np.abs(hi - hi_at_p2)
    small = np.abs(hi) < H_DENOM_MIN
    delta_h = np.where(small, num / H_DENOM_MIN, num / np.where(small, 1.0, np.abs(hi)))
    n_small = int((small & h_ref.valid_mask()).sum())
    if n_small:
        logger.debug("height check used absolute rule at %d near-zero pixels", n_small)
    ok = h_ref.valid_mask() & ok0 & okp & oks & ok2 & okb & okr
    return delta_p, delta_h, ok, lat, lon


def reproject_check(ref_rpc: RpcModel, src_rpc: RpcModel, h_ref: RasterF32,
                    h_src: RasterF32, p: PixelCoord):
    """Reprojection errors (delta_p pixels, delta_h relative) for one pixel.

    The reference pixel is localized at its map height, projected into the
    source view, localized back at the bilinearly-sampled source height, and
    reprojected into the reference view.  Raises OutOfFootprint when any
    step leaves a raster (the consistency check fails there; it is not a
    pipeline abort).
    """
    hi, okh = bilinear_sample(h_ref, p.u, p.v)
    hi = float(hi[0])
    if not bool(okh):
        raise OutOfFootprint(f"pixel {p} invalid in the reference height map")
    lat, lon, ok, err = localize_grid(ref_rpc, p.u, p.v, hi)
    qu, qv, okp = project_grid(src_rpc, lat, lon, hi, check_cube=False)
    hj, oks = bilinear_sample(h_src, qu, qv)
    if not (bool(ok) and bool(okp) and bool(oks)):
        raise OutOfFootprint(f"pixel {p} projects outside the source footprint")
    hj = float(hj[0])
    lat2, lon2, ok2, _ = localize_grid(src_rpc, qu, qv, hj, init=(lat, lon))
    pu, pv, okb = project_grid(ref_rpc, lat2, lon2, hj, check_cube=False)
    hip, okr = bilinear_sample(h_ref, pu, pv)
    if not (bool(ok2) and bool(okb) and bool(okr)):
        raise OutOfFootprint(f"pixel {p} reprojects outside the reference footprint")
    delta_p = float(np.hypot(pu - p.u, pv - p.v))
    num = abs(hi - float(hip[0]))
    delta_h = num / H_DENOM_MIN if abs(hi) < H_DENOM_MIN else num / abs(hi)
    return delta_p, delta_h


def consistency_filter(heightmaps, rpcs, dp_max: float = DP_MAX_DEFAULT,
                       dh_max: float = DH_MAX_DEFAULT, min_agree: int = MIN_AGREE_DEFAULT,
                       return_masks: bool = False):
    """Retain, for every view as reference, the pixels whose reprojection
    errors against at least ``min_agree`` source views satisfy
    delta_p < dp_max and delta_h < dh_max (both strict)."""
    n = len(heightmaps)
    if n < 2 or len(rpcs) != n:
        raise ViewCountTooSmall(f"need >= 2 aligned views, got {n} maps / {len(rpcs)} cameras")
    points: list[ReliablePoint] = []
    masks = []
    for i in range(n):
        agree = None
        lat = lon = None
        for j in range(n):
            if j == i:
                continue
            dp, dh, ok, lat, lon = _pair_deltas(rpcs[i], rpcs[j], heightmaps[i], heightmaps[j])
            passing = ok & (dp < dp_max) & (dh < dh_max)
            agree = passing.astype(np.int32) if agree is None else agree + passing
        keep = heightmaps[i].valid_mask() & (agree >= min_agree)
        masks.append(keep)
        hs = heightmaps[i].plane(0)
        for r, c in zip(*np.nonzero(keep)):
            points.append(ReliablePoint(
                geo=GeoPoint(float(lat[r, c]), float(lon[r, c]), float(hs[r, c])),
                source_view=i, n_agreeing=int(agree[r, c])))
    if return_masks:
        return points, masks
    return points


def all_points(heightmaps, rpcs):
    """Every valid height-map pixel as a point, bypassing the filter."""
    points = []
    for i, (hm, cam) in enumerate(zip(heightmaps, rpcs)):
        h, w = hm.height, hm.width
        vv, uu = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
        hs = hm.plane(0).astype(np.float64)
        lat, lon, ok, _ = localize_grid(cam, uu, vv, hs)
        keep = hm.valid_mask() & ok
        for r, c in zip(*np.nonzero(keep)):
            points.append(ReliablePoint(
                geo=GeoPoint(float(lat[r, c]), float(lon[r, c]), float(hs[r, c])),
                source_view=i, n_agreeing=0))
    return points


def rasterize_dsm(points, grid: DsmGrid, mode: str = "max") -> DsmGrid:
    """Nadir-project points into grid cells; per-cell height is the maximum
    (or, for diagnostics, the median) of the assigned points."""
    if not points:
        raise EmptyPointSet("no points to rasterize")
    lat = np.array([p.geo.lat for p in points])
    lon = np.array([p.geo.lon for p in points])
    hei = np.array([p.geo.hei for p in points])
    e, nn, _ = geo.geodetic_to_flat(lat, lon, hei, (grid.origin[0], grid.origin[1], 0.0))
    c = np.round((e - grid.x0) / grid.cell_size).astype(np.int64)
    r = np.round((grid.y0 - nn) / grid.cell_size).astype(np.int64)
    inb = (r >= 0) & (r < grid.rows) & (c >= 0) & (c < grid.cols)
    if not inb.any():
        raise EmptyPointSet("no point falls inside the grid")
    out = DsmGrid.empty(grid.origin, grid.x0, grid.y0, grid.rows, grid.cols,
                        grid.cell_size, grid.nodata)
    if mode == "max":
        flat = np.full(grid.rows * grid.cols, -np.inf)
        np.maximum.at(flat, r[inb] * grid.cols + c[inb], hei[inb])
        filled = np.isfinite(flat)
        out.heights = np.where(filled, flat, grid.nodata).reshape(grid.rows, grid.cols)
    elif mode == "median":
        buckets: dict[int, list] = {}
        for key, hv in zip(r[inb] * grid.cols + c[inb], hei[inb]):
            buckets.setdefault(int(key), []).append(hv)
        hmap = out.heights.ravel()
        for key, vals in buckets.items():
            hmap[key] = float(np.median(vals))
        out.heights = hmap.reshape(grid.rows, grid.cols)
    else:
        raise ValueError(f"unknown rasterization mode {mode!r}")
    return out


def save_points(points, path: str | os.PathLike) -> None:
    with open(path, "w") as f:
        for p in points:
            f.write(f"{p.geo.lat!r} {p.geo.lon!r} {p.geo.hei!r} {p.n_agreeing}\n")


def save_dsm(dsm: DsmGrid, path: str | os.PathLike) -> None:
    import json

    from .raster import save_raster
    save_raster(RasterF32(dsm.heights.astype(np.float32)[:, :, None], dsm.data_mask()), path)
    meta = {"origin_lat": dsm.origin[0], "origin_lon": dsm.origin[1],
            "x0": dsm.x0, "y0": dsm.y0, "cell_size": dsm.cell_size,
            "nodata": dsm.nodata, "rows": dsm.rows, "cols": dsm.cols}
    with open(os.fspath(path) + ".json", "w") as f:
        json.dump(meta, f, indent=2)


def load_dsm(path: str | os.PathLike) -> DsmGrid:
    import json

    from .raster import load_raster
    raster = load_raster(path)
    with open(os.fspath(path) + ".json") as f:
        meta = json.load(f)
    heights = raster.plane(0).astype(np.float64).copy()
    heights[~raster.valid_mask()] = meta["nodata"]
    return DsmGrid(origin=(meta["origin_lat"], meta["origin_lon"]), x0=meta["x0"],
                   y0=meta["y0"], cell_size=meta["cell_size"], heights=heights,
                   nodata=meta["nodata"])
