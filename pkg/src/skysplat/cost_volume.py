"""Height-sweep cost volumes: RPC-guided warping, variance costs, box
regularization, and soft-argmin height regression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import BadRange, EmptySourceSet, ShapeMismatch
from .raster import RasterF32, same_shape
from .rpc import RpcModel, localize_grid, project_grid

SOFTMAX_TEMPERATURE_DEFAULT = 1.0


@dataclass(frozen=True)
class HeightHypotheses:
    h_min: float
    h_max: float
    count: int
    values: np.ndarray

    @property
    def spacing(self) -> float:
        return (self.h_max - self.h_min) / (self.count - 1)


@dataclass
class CostVolume:
    hypotheses: HeightHypotheses
    cost: np.ndarray   # (H, W, M), lower = better
    valid: np.ndarray  # (H, W, M) bool

    @property
    def height(self) -> int:
        return self.cost.shape[0]

    @property
    def width(self) -> int:
        return self.cost.shape[1]


def sample_heights(h_min: float, h_max: float, m: int) -> HeightHypotheses:
    if m < 2:
        raise BadRange(f"need at least 2 hypotheses, got {m}")
    if not h_min < h_max:
        raise BadRange(f"need h_min < h_max, got [{h_min}, {h_max}]")
    values = np.linspace(h_min, h_max, m)
    values[0] = h_min
    values[-1] = h_max
    return HeightHypotheses(float(h_min), float(h_max), int(m), values)


def bilinear_sample(feat: RasterF32, u, v):
    """Sample a raster at fractional pixel coordinates.

    Returns (values, ok): values has shape u.shape + (C,); ok is False where
    the 2x2 neighborhood leaves the raster or touches an invalid pixel.
    """
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    h, w = feat.height, feat.width
    inb = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1) & np.isfinite(u) & np.isfinite(v)
    uc = np.clip(np.where(inb, u, 0.0), 0, w - 1)
    vc = np.clip(np.where(inb, v, 0.0), 0, h - 1)
    x0 = np.clip(np.floor(uc).astype(np.int64), 0, w - 2) if w > 1 else np.zeros(uc.shape, np.int64)
    y0 = np.clip(np.floor(vc).astype(np.int64), 0, h - 2) if h > 1 else np.zeros(vc.shape, np.int64)
    fx = uc - x0
    fy = vc - y0
    d = feat.data
    w00 = (1 - fx) * (1 - fy)
    w10 = fx * (1 - fy)
    w01 = (1 - fx) * fy
    w11 = fx * fy
    vals = (d[y0, x0] * w00[..., None] + d[y0, x0 + 1] * w10[..., None]
            + d[y0 + 1, x0] * w01[..., None] + d[y0 + 1, x0 + 1] * w11[..., None])
    ok = inb
    if feat.valid is not None:
        m = feat.valid
        ok = ok & m[y0, x0] & m[y0, x0 + 1] & m[y0 + 1, x0] & m[y0 + 1, x0 + 1]
    return vals, ok


def warp_to_ref(ref_rpc: RpcModel, src_rpc: RpcModel, src_feat: RasterF32, h: float,
                ref_dims, init=None, return_latlon: bool = False):
    """Warp a source raster into the reference view at one height hypothesis.

    Each reference pixel is localized through the reference camera at height
    h, projected into the source camera, and bilinearly interpolated from
    src_feat.  Pixels that fail localization, fall outside the source
    footprint, or land on invalid source pixels are marked invalid.

    ``init`` optionally warm-starts the localization with (lat, lon) arrays
    from a nearby hypothesis.
    """
    rh, rw = ref_dims
    vv, uu = np.meshgrid(np.arange(rh, dtype=float), np.arange(rw, dtype=float), indexing="ij")
    lat, lon, ok_loc, _ = localize_grid(ref_rpc, uu, vv, h, init=init)
    su, sv, ok_prj = project_grid(src_rpc, lat, lon, np.full_like(lat, h), check_cube=False)
    vals, ok_smp = bilinear_sample(src_feat, su, sv)
    valid = ok_loc & ok_prj & ok_smp
    out = RasterF32(np.where(valid[..., None], vals, 0.0).astype(np.float32), valid)
    if return_latlon:
        return out, (lat, lon)
    return out


def warp_at_heightmap(ref_rpc: RpcModel, src_rpc: RpcModel, src_feat: RasterF32,
                      h_map: RasterF32, init=None) -> RasterF32:
    """Like warp_to_ref but with a per-pixel height map instead of a constant."""
    rh, rw = h_map.height, h_map.width
    vv, uu = np.meshgrid(np.arange(rh, dtype=float), np.arange(rw, dtype=float), indexing="ij")
    hmap = h_map.plane(0).astype(float)
    lat, lon, ok_loc, _ = localize_grid(ref_rpc, uu, vv, hmap, init=init)
    su, sv, ok_prj = project_grid(src_rpc, lat, lon, hmap, check_cube=False)
    vals, ok_smp = bilinear_sample(src_feat, su, sv)
    valid = ok_loc & ok_prj & ok_smp & h_map.valid_mask()
    return RasterF32(np.where(valid[..., None], vals, 0.0).astype(np.float32), valid)


def variance_cost_slice(ref_feat: RasterF32, warped_srcs):
    """Per-pixel variance cost across {ref, warped sources} for one hypothesis.

    Returns (cost, valid): population variance across the views valid at each
    pixel, averaged over channels; valid requires >= 2 contributing views.
    """
    if not warped_srcs:
        raise EmptySourceSet("need at least one warped source view")
    for wsrc in warped_srcs:
        same_shape(ref_feat, wsrc)
    stack = np.stack([ref_feat.data] + [w.data for w in warped_srcs]).astype(np.float64)
    masks = np.stack([ref_feat.valid_mask()] + [w.valid_mask() for w in warped_srcs])
    mf = masks[..., None].astype(np.float64)
    count = masks.sum(axis=0).astype(np.float64)
    valid = count >= 2
    safe = np.maximum(count, 1.0)[..., None]
    mean = (stack * mf).sum(axis=0) / safe
    var = (((stack - mean) ** 2) * mf).sum(axis=0) / safe
    cost = var.mean(axis=-1)
    return np.where(valid, cost, 0.0), valid


def build_variance_cost(ref_feat: RasterF32, warped, hypotheses: HeightHypotheses) -> CostVolume:
    """Assemble a cost volume from warped rasters indexed [source][hypothesis]."""
    if not warped:
        raise EmptySourceSet("no source views")
    m = hypotheses.count
    for per_src in warped:
        if len(per_src) != m:
            raise ShapeMismatch(f"expected {m} hypothesis slices, got {len(per_src)}")
    h, w = ref_feat.height, ref_feat.width
    cost = np.zeros((h, w, m), dtype=np.float32)
    valid = np.zeros((h, w, m), dtype=bool)
    for k in range(m):
        c, v = variance_cost_slice(ref_feat, [per_src[k] for per_src in warped])
        cost[:, :, k] = c
        valid[:, :, k] = v
    return CostVolume(hypotheses, cost, valid)


def regularize(cv: CostVolume, radius: int) -> CostVolume:
    """Validity-weighted separable box filter over the spatial dimensions."""
    if radius < 0:
        raise BadRange(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return CostVolume(cv.hypotheses, cv.cost.copy(), cv.valid.copy())
    size = 2 * radius + 1
    out = np.zeros_like(cv.cost)
    for k in range(cv.cost.shape[2]):
        m = cv.valid[:, :, k].astype(np.float64)
        num = ndimage.uniform_filter(cv.cost[:, :, k].astype(np.float64) * m,
                                     size=size, mode="constant", cval=0.0)
        den = ndimage.uniform_filter(m, size=size, mode="constant", cval=0.0)
        out[:, :, k] = np.where(den > 0, num / np.maximum(den, 1e-300), 0.0)
    out = np.where(cv.valid, out, 0.0).astype(np.float32)
    return CostVolume(cv.hypotheses, out, cv.valid.copy())


def soft_argmin(cv: CostVolume, temperature: float = SOFTMAX_TEMPERATURE_DEFAULT) -> RasterF32:
    """Softmax-weighted expected height along the hypothesis axis."""
    if temperature <= 0:
        raise BadRange(f"temperature must be positive, got {temperature}")
    cost = cv.cost.astype(np.float64)
    valid = cv.valid
    any_valid = valid.any(axis=2)
    x = np.where(valid, -cost / temperature, -np.inf)
    xmax = np.max(x, axis=2, keepdims=True)
    xmax = np.where(np.isfinite(xmax), xmax, 0.0)
    w = np.exp(x - xmax)
    w = np.where(valid, w, 0.0)
    wsum = w.sum(axis=2)
    w = w / np.maximum(wsum, 1e-300)[..., None]
    heights = (w * cv.hypotheses.values[None, None, :]).sum(axis=2)
    heights = np.clip(heights, cv.hypotheses.h_min, cv.hypotheses.h_max)
    heights = np.where(any_valid, heights, 0.0)
    return RasterF32(heights.astype(np.float32)[:, :, None], any_valid)
