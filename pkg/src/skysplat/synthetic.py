"""Synthetic oracle harness: procedural terrain and texture, exact
perspective cameras at satellite-like range, RPCs fitted to them, rendered
multi-view images with injected transients and radiometric shifts, and
ground-truth rasters.

All randomness is seeded and all per-pixel noise is integer-hash based, so
identical scene specs produce bit-identical bundles regardless of schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geo
from .aggregation import DsmGrid
from .errors import BadSpec, FitResidualTooLarge
from .kernels import raycast
from .raster import RasterF32
from .rpc import RpcModel, poly_terms

SATELLITE_ALTITUDE = 500e3  # meters
SCENE_LAT0 = 32.0
SCENE_LON0 = -110.0

_DEG = np.pi / 180.0


# ---------------------------------------------------------------------------
# exact cameras
# ---------------------------------------------------------------------------

@dataclass
class PerspectiveCamera:
    """Pinhole camera in the tangent world frame anchored at ``origin``."""

    c: np.ndarray      # center, world ENU meters
    rot: np.ndarray    # 3x3; rows are the camera x, y, z axes in world coords
    fx: float
    fy: float
    cx: float
    cy: float
    origin: tuple      # (lat0, lon0, h0) geodetic anchor of the world frame

    def project_world(self, w):
        pc = (np.asarray(w, float) - self.c) @ self.rot.T
        u = self.fx * pc[..., 0] / pc[..., 2] + self.cx
        v = self.fy * pc[..., 1] / pc[..., 2] + self.cy
        return u, v

    def project_geodetic(self, lat, lon, hei):
        lat, lon, hei = np.broadcast_arrays(np.asarray(lat, float), np.asarray(lon, float),
                                            np.asarray(hei, float))
        w = geo.geodetic_to_tangent(lat, lon, hei, self.origin)
        return self.project_world(w)

    def ray_dirs(self, u, v):
        """Unit world-frame ray directions through pixel coordinates."""
        u = np.asarray(u, float)
        v = np.asarray(v, float)
        d = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)
        d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        return d @ self.rot


@dataclass
class AffineCamera:
    """Camera linear in geodetic coordinates; exactly representable by an RPC."""

    a: np.ndarray  # 2x3
    b: np.ndarray  # 2

    def project_geodetic(self, lat, lon, hei):
        g = np.stack(np.broadcast_arrays(np.asarray(lat, float), np.asarray(lon, float),
                                         np.asarray(hei, float)), axis=-1)
        uv = g @ self.a.T + self.b
        return uv[..., 0], uv[..., 1]


def make_view_camera(off_nadir_deg: float, azimuth_deg: float, extent: float, gsd: float,
                     h_mid: float, origin, altitude: float = SATELLITE_ALTITUDE) -> PerspectiveCamera:
    """Perspective camera looking at the scene center from a satellite-like
    standoff at the given off-nadir/azimuth angles."""
    theta = off_nadir_deg * _DEG
    az = azimuth_deg * _DEG
    dist = altitude / max(np.cos(theta), 1e-6)
    target = np.array([0.0, 0.0, h_mid])
    offset = dist * np.array([np.sin(theta) * np.sin(az), np.sin(theta) * np.cos(az), np.cos(theta)])
    c = target + offset
    z = (target - c)
    z = z / np.linalg.norm(z)
    north = np.array([0.0, 1.0, 0.0])
    x = np.cross(north, z)
    if np.linalg.norm(x) < 1e-12:
        x = np.array([1.0, 0.0, 0.0])
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    rot = np.stack([x, y, z])
    npx = int(round(extent / gsd))
    f = dist / gsd
    return PerspectiveCamera(c=c, rot=rot, fx=f, fy=f,
                             cx=(npx - 1) / 2.0, cy=(npx - 1) / 2.0, origin=tuple(origin))


def ray_height_intersection(cam: PerspectiveCamera, u, v, hei):
    """Closed-form geodetic coordinates where pixel rays cross height ``hei``.

    Intersects each ray with the sphere of radius EARTH_RADIUS + hei; the
    independent oracle for inverse localization.
    """
    d = cam.ray_dirs(u, v)
    basis = geo.tangent_basis(cam.origin[0], cam.origin[1])
    e0 = geo._ecef(cam.origin[0], cam.origin[1], cam.origin[2])
    p0 = e0 + cam.c @ basis
    q = d @ basis
    rr = geo.EARTH_RADIUS + np.asarray(hei, float)
    a = np.einsum("...i,...i->...", q, q)
    b = 2.0 * np.einsum("...i,...i->...", p0, q)
    cc = np.einsum("i,i->", p0, p0) - rr * rr
    disc = b * b - 4 * a * cc
    t = (-b - np.sqrt(disc)) / (2 * a)
    p = p0 + t[..., None] * q
    r = np.linalg.norm(p, axis=-1)
    lat = np.arcsin(np.clip(p[..., 2] / r, -1.0, 1.0)) / _DEG
    lon = np.arctan2(p[..., 1], p[..., 0]) / _DEG
    return lat, lon, r - geo.EARTH_RADIUS


# ---------------------------------------------------------------------------
# oracle RPC fitting
# ---------------------------------------------------------------------------

def fit_rpc_oracle(cam, volume, fit_grid: int = 10, validate_grid: int = 27,
                   max_residual: float = 0.01) -> RpcModel:
    """Least-squares RPC fit to an exact camera over a geodetic box.

    volume = ((lat_min, lat_max), (lon_min, lon_max), (h_min, h_max)).
    Validated on a denser grid; raises FitResidualTooLarge if the maximum
    projection error exceeds ``max_residual`` pixels.
    """
    (la0, la1), (lo0, lo1), (h0, h1) = volume
    if not (la1 > la0 and lo1 > lo0 and h1 > h0):
        raise BadSpec(f"degenerate fit volume {volume}")
    lat_off, lat_scale = 0.5 * (la0 + la1), 0.5 * (la1 - la0)
    lon_off, lon_scale = 0.5 * (lo0 + lo1), 0.5 * (lo1 - lo0)
    hei_off, hei_scale = 0.5 * (h0 + h1), 0.5 * (h1 - h0)

    def sample(n):
        g = np.linspace(-1.0, 1.0, n)
        L, P, H = np.meshgrid(g, g, g, indexing="ij")
        lat = lat_off + L * lat_scale
        lon = lon_off + P * lon_scale
        hei = hei_off + H * hei_scale
        u, v = cam.project_geodetic(lat.ravel(), lon.ravel(), hei.ravel())
        return L.ravel(), P.ravel(), H.ravel(), np.asarray(u, float), np.asarray(v, float)

    L, P, H, u, v = sample(fit_grid)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise FitResidualTooLarge(np.inf)
    samp_off, samp_scale = 0.5 * (u.max() + u.min()), max(0.5 * (u.max() - u.min()), 1e-9)
    line_off, line_scale = 0.5 * (v.max() + v.min()), max(0.5 * (v.max() - v.min()), 1e-9)
    un = (u - samp_off) / samp_scale
    vn = (v - line_off) / line_scale

    terms = poly_terms(L, P, H)

    def solve(target):
        a = np.hstack([terms, -target[:, None] * terms[:, 1:]])
        coef, *_ = np.linalg.lstsq(a, target, rcond=None)
        num = coef[:20]
        den = np.concatenate([[1.0], coef[20:]])
        return num, den

    samp_num, samp_den = solve(un)
    line_num, line_den = solve(vn)
    model = RpcModel(line_off=line_off, samp_off=samp_off, lat_off=lat_off, lon_off=lon_off,
                     hei_off=hei_off, line_scale=line_scale, samp_scale=samp_scale,
                     lat_scale=lat_scale, lon_scale=lon_scale, hei_scale=hei_scale,
                     line_num=line_num, line_den=line_den,
                     samp_num=samp_num, samp_den=samp_den)

    Lv, Pv, Hv, uv_, vv_ = sample(validate_grid)
    tv = poly_terms(Lv, Pv, Hv)
    pu = samp_off + samp_scale * (tv @ samp_num) / (tv @ samp_den)
    pv = line_off + line_scale * (tv @ line_num) / (tv @ line_den)
    max_err = float(np.max(np.hypot(pu - uv_, pv - vv_)))
    if not np.isfinite(max_err) or max_err > max_residual:
        raise FitResidualTooLarge(max_err)
    return model


# ---------------------------------------------------------------------------
# procedural terrain, texture
# ---------------------------------------------------------------------------

def _hash01(ix, iy, seed):
    """Deterministic integer hash of 2D lattice coordinates to [0, 1)."""
    seed_mix = np.uint64((int(seed) * 0x165667B19E3779F9) % (1 << 64))
    h = (ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
         ^ iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
         ^ seed_mix)
    h ^= h >> np.uint64(33)
    h *= np.uint64(0xFF51AFD7ED558CCD)
    h ^= h >> np.uint64(33)
    h *= np.uint64(0xC4CEB9FE1A85EC53)
    h ^= h >> np.uint64(33)
    return h.astype(np.float64) / 2.0 ** 64


def value_noise(x, y, wavelength, seed):
    """Smooth band-limited value noise in [0, 1] over ground coordinates."""
    gx = np.asarray(x, float) / wavelength
    gy = np.asarray(y, float) / wavelength
    # shift into positive territory so floor() keeps lattice alignment
    gx = gx + 4096.0
    gy = gy + 4096.0
    ix = np.floor(gx).astype(np.int64)
    iy = np.floor(gy).astype(np.int64)
    fx = gx - ix
    fy = gy - iy
    sx = fx * fx * (3 - 2 * fx)
    sy = fy * fy * (3 - 2 * fy)
    v00 = _hash01(ix, iy, seed)
    v10 = _hash01(ix + 1, iy, seed)
    v01 = _hash01(ix, iy + 1, seed)
    v11 = _hash01(ix + 1, iy + 1, seed)
    return (v00 * (1 - sx) * (1 - sy) + v10 * sx * (1 - sy)
            + v01 * (1 - sx) * sy + v11 * sx * sy)


# ---------------------------------------------------------------------------
# scene spec and bundle
# ---------------------------------------------------------------------------

_DEFAULT_ANGLES = ((8.0, 0.0), (12.0, 120.0), (12.0, 240.0))


@dataclass
class SceneSpec:
    seed: int = 0
    extent: float = 76.8          # meters square
    gsd: float = 0.3
    relief: dict = field(default_factory=lambda: {"kind": "flat", "height": 10.0})
    n_views: int = 3
    view_angles: tuple = _DEFAULT_ANGLES
    transients: tuple = ()        # (view_index, (r0, c0, r1, c1), (r, g, b))
    radiometric: tuple = ()       # per-view (gain, bias)

    def validate(self):
        if self.gsd <= 0 or self.extent <= 0:
            raise BadSpec("extent and gsd must be positive")
        if self.n_views < 1:
            raise BadSpec("need at least one view")
        if len(self.view_angles) < self.n_views:
            raise BadSpec("need a view angle per view")
        if self.relief.get("kind") not in ("flat", "ramp", "buildings", "fractal"):
            raise BadSpec(f"unknown relief kind {self.relief.get('kind')!r}")
        for t in self.transients:
            if not (0 <= t[0] < self.n_views):
                raise BadSpec(f"transient view index {t[0]} out of range")
        if self.radiometric and len(self.radiometric) < self.n_views:
            raise BadSpec("need a radiometric (gain, bias) per view when provided")


@dataclass
class SceneBundle:
    spec: SceneSpec
    origin: tuple                  # (lat0, lon0, 0) geodetic scene anchor
    images: list
    rpcs: list
    exact_cams: list
    gt_height: list
    gt_dsm: DsmGrid
    gt_transient_masks: list
    height_range: tuple            # (terrain min, terrain max) meters


def _terrain_heights(x, y, spec: SceneSpec, rng_buildings):
    kind = spec.relief["kind"]
    if kind == "flat":
        return np.full_like(x, float(spec.relief.get("height", 0.0)))
    if kind == "ramp":
        h0 = float(spec.relief.get("h_min", 0.0))
        h1 = float(spec.relief.get("h_max", 20.0))
        t = (x + spec.extent / 2) / spec.extent
        return h0 + np.clip(t, 0.0, 1.0) * (h1 - h0)
    if kind == "fractal":
        octaves = int(spec.relief.get("octaves", 3))
        amp = float(spec.relief.get("amplitude", 10.0))
        base = float(spec.relief.get("base", 0.0))
        out = np.zeros_like(x)
        total = 0.0
        for o in range(octaves):
            w = max(spec.extent / (2.0 ** (o + 1)), 8.0 * spec.gsd)
            a = 0.5 ** o
            out += a * value_noise(x, y, w, spec.seed * 31 + o)
            total += a
        return base + amp * out / total
    # buildings: flat base plus axis-aligned boxes
    base = float(spec.relief.get("base", 0.0))
    out = np.full_like(x, base)
    count = int(spec.relief.get("count", 6))
    h0 = float(spec.relief.get("h_min", 8.0))
    h1 = float(spec.relief.get("h_max", 25.0))
    half = spec.extent / 2.0
    for _ in range(count):
        cx_, cy_ = rng_buildings.uniform(-0.62 * half, 0.62 * half, size=2)
        wx, wy = rng_buildings.uniform(0.10 * half, 0.30 * half, size=2)
        hb = rng_buildings.uniform(h0, h1)
        inside = (np.abs(x - cx_) <= wx) & (np.abs(y - cy_) <= wy)
        out = np.where(inside, np.maximum(out, base + hb), out)
    return out


def _albedo(x, y, spec: SceneSpec):
    """Checkered RGB albedo modulated by band-limited value noise."""
    period = 8.0 * spec.gsd
    # checker cells carry hashed (aperiodic) brightness so plane-sweep
    # matching has no repeating pattern to alias against
    cx = np.floor(np.asarray(x, float) / period + 4096.0).astype(np.int64)
    cy = np.floor(np.asarray(y, float) / period + 4096.0).astype(np.int64)
    checker = _hash01(cx, cy, spec.seed * 7 + 11)
    n1 = value_noise(x, y, 8.0 * spec.gsd, spec.seed * 7 + 1)
    n2 = value_noise(x, y, 16.0 * spec.gsd, spec.seed * 7 + 2)
    n3 = value_noise(x, y, 32.0 * spec.gsd, spec.seed * 7 + 3)
    tex = 0.5 * n1 + 0.3 * n2 + 0.2 * n3
    base = 0.25 + 0.40 * checker + 0.20 * (tex - 0.5)
    rgb = np.stack([base + 0.05 * (n2 - 0.5), base, base - 0.05 * (n3 - 0.5)], axis=-1)
    return np.clip(rgb, 0.05, 0.95)


def generate(spec: SceneSpec, force_kernel=None) -> SceneBundle:
    """Render a deterministic multi-view oracle bundle from a scene spec."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    origin = (SCENE_LAT0, SCENE_LON0, 0.0)
    npx = int(round(spec.extent / spec.gsd))
    res = spec.gsd / 2.0

    # fine terrain/albedo rasters on flat ground coordinates, with margin for
    # oblique rays walking outside the nominal extent
    max_theta = max(a[0] for a in spec.view_angles[: spec.n_views]) * _DEG
    probe = np.linspace(-spec.extent, spec.extent, 64)
    px, py = np.meshgrid(probe, probe)
    hprobe = _terrain_heights(px, py, spec, np.random.default_rng(spec.seed + 1))
    h_lo, h_hi = float(hprobe.min()), float(hprobe.max())
    margin = (h_hi - h_lo + 4.0) * np.tan(max_theta) + 8.0 * spec.gsd + 2.0
    margin = np.ceil(margin / spec.gsd) * spec.gsd
    half = spec.extent / 2.0
    nfine = int(round((spec.extent + 2 * margin) / res))
    # sample positions at fine-cell centers so DSM cells cover whole 2x2 blocks
    fx0 = -half - margin + res / 2.0
    coords = fx0 + res * np.arange(nfine)
    gx, gy = np.meshgrid(coords, coords)
    terr = _terrain_heights(gx, gy, spec, np.random.default_rng(spec.seed + 1))
    h_lo, h_hi = float(terr.min()), float(terr.max())

    # the terrain raster is indexed south-to-north: y = ty0 + row * res
    tx0 = coords[0]
    ty0 = coords[0]

    h_mid = 0.5 * (h_lo + h_hi)
    cams = [make_view_camera(a[0], a[1], spec.extent, spec.gsd, h_mid, origin)
            for a in spec.view_angles[: spec.n_views]]

    basis = geo.tangent_basis(origin[0], origin[1])
    e0 = geo._ecef(origin[0], origin[1], origin[2])
    lat0r = origin[0] * _DEG
    lon0r = origin[1] * _DEG

    images, gt_heights, masks = [], [], []
    sub = ((-0.25, -0.25), (-0.25, 0.25), (0.25, -0.25), (0.25, 0.25))
    vv, uu = np.meshgrid(np.arange(npx, dtype=float), np.arange(npx, dtype=float), indexing="ij")
    for vi, cam in enumerate(cams):
        # GT height from the pixel-center ray
        dirs = cam.ray_dirs(uu, vv)
        hit, hgt, _, _ = raycast(cam.c, dirs, terr, tx0, ty0, res,
                                 h_lo, h_hi, res, e0, basis, lat0r, lon0r,
                                 force=force_kernel)
        hgt = np.where(hit, hgt, 0.0)
        gt_heights.append(RasterF32(hgt.astype(np.float32)[:, :, None], hit))

        # 2x2 supersampled color
        acc = np.zeros((npx, npx, 3))
        wsum = np.zeros((npx, npx))
        for du, dv in sub:
            d2 = cam.ray_dirs(uu + du, vv + dv)
            hit2, _, gx2, gy2 = raycast(cam.c, d2, terr, tx0, ty0, res,
                                        h_lo, h_hi, res, e0, basis, lat0r, lon0r,
                                        force=force_kernel)
            col = _albedo(np.where(hit2, gx2, 0.0), np.where(hit2, gy2, 0.0), spec)
            acc += np.where(hit2[:, :, None], col, 0.0)
            wsum += hit2.astype(float)
        img = acc / np.maximum(wsum, 1.0)[:, :, None]

        tmask = np.zeros((npx, npx), dtype=bool)
        for tview, rect, color in spec.transients:
            if tview != vi:
                continue
            r0, c0, r1, c1 = (int(v) for v in rect)
            img[r0:r1, c0:c1, :] = np.asarray(color, float)[None, None, :]
            tmask[r0:r1, c0:c1] = True
        if spec.radiometric:
            gain, bias = spec.radiometric[vi]
            img = gain * img + bias
        images.append(RasterF32(img.astype(np.float32), hit))
        masks.append(tmask)

    # oracle RPCs over the scene footprint plus margin
    geo_half_lat = (half + margin) / geo.EARTH_RADIUS / _DEG
    geo_half_lon = (half + margin) / (geo.EARTH_RADIUS * np.cos(lat0r)) / _DEG
    volume = ((origin[0] - geo_half_lat, origin[0] + geo_half_lat),
              (origin[1] - geo_half_lon, origin[1] + geo_half_lon),
              (h_lo - 5.0, h_hi + 5.0))
    rpcs = [fit_rpc_oracle(cam, volume) for cam in cams]

    # GT DSM: per-cell max over the 2x2 fine samples inside each cell, with
    # DSM row 0 at the north edge (terrain row 0 is at the south edge)
    i0 = int(round(margin / res))
    crop = terr[i0:i0 + 2 * npx, i0:i0 + 2 * npx]
    dsm_heights = crop.reshape(npx, 2, npx, 2).max(axis=(1, 3))[::-1, :]
    gt_dsm = DsmGrid(origin=(origin[0], origin[1]), x0=-half + spec.gsd / 2.0,
                     y0=half - spec.gsd / 2.0, cell_size=spec.gsd,
                     heights=dsm_heights.astype(np.float64), nodata=-9999.0)

    return SceneBundle(spec=spec, origin=origin, images=images, rpcs=rpcs,
                       exact_cams=cams, gt_height=gt_heights, gt_dsm=gt_dsm,
                       gt_transient_masks=masks, height_range=(h_lo, h_hi))


def save_bundle(bundle: SceneBundle, outdir) -> None:
    """Write a bundle directory: PNG images, .rpc.json cameras, SKYR GT
    rasters, the echoed scene spec, and an ``auto.json`` reconstruction
    config pointing at the written files."""
    import dataclasses
    import json
    import os

    from .aggregation import save_dsm
    from .raster import save_raster
    from .rpc import save_rpc

    os.makedirs(outdir, exist_ok=True)
    views = []
    for i, (img, rpc, gth, tmask) in enumerate(zip(bundle.images, bundle.rpcs,
                                                   bundle.gt_height,
                                                   bundle.gt_transient_masks)):
        img_path = os.path.join(outdir, f"view{i}.png")
        rpc_path = os.path.join(outdir, f"view{i}.rpc.json")
        rel_path = os.path.join(outdir, f"rel_height{i}.skyr")
        save_raster(img, img_path)
        save_rpc(rpc, rpc_path)
        save_raster(gth, os.path.join(outdir, f"gt_height{i}.skyr"))
        save_raster(RasterF32(tmask.astype(np.float32)[:, :, None]),
                    os.path.join(outdir, f"gt_transient{i}.skyr"))
        # affine transform of GT stands in for a relative (scale-free) prior
        rel = RasterF32((0.5 * gth.data + 3.0).astype(np.float32), gth.valid)
        save_raster(rel, rel_path)
        views.append({"image": img_path, "rpc": rpc_path, "rel_height": rel_path})
    dsm_path = os.path.join(outdir, "gt_dsm.skyr")
    save_dsm(bundle.gt_dsm, dsm_path)
    with open(os.path.join(outdir, "spec.json"), "w") as f:
        json.dump(dataclasses.asdict(bundle.spec), f, indent=2, default=list)

    h_lo, h_hi = bundle.height_range
    if h_hi - h_lo < 1.0:
        pad = 0.5 * (1.0 - (h_hi - h_lo))
        h_lo, h_hi = h_lo - pad, h_hi + pad
    dsm = bundle.gt_dsm
    auto = {
        "views": views,
        "height_range": [h_lo, h_hi],
        "gt_dsm": dsm_path,
        "dsm": {"origin_lat": dsm.origin[0], "origin_lon": dsm.origin[1],
                "x0": dsm.x0, "y0": dsm.y0, "rows": dsm.rows, "cols": dsm.cols,
                "cell_size": dsm.cell_size},
        "output_dir": os.path.join(outdir, "recon"),
    }
    with open(os.path.join(outdir, "auto.json"), "w") as f:
        json.dump(auto, f, indent=2)
