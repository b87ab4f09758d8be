"""3D Gaussian scenes lifted from height maps and a desk-scale splatting
renderer (EWA projection, front-to-back alpha compositing).

The renderer favors fidelity over throughput: a global depth sort followed
by per-Gaussian rasterization into each footprint, equivalent to per-pixel
front-to-back compositing.  An orthographic mode renders DSM-aligned
top-down views for debugging.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import geo
from .errors import EmptyGaussianSet, EmptyHeightMap, MagicMismatch, TruncatedFile
from .kernels import composite
from .raster import RasterF32
from .rpc import PinholeFit, RpcModel, localize_grid

_SKGS_MAGIC = b"SKGS1\n"

DEFAULT_ALPHA = 0.8
COV_DILATION = 0.3  # pixel-space low-pass added to the 2D covariance diagonal


@dataclass(frozen=True)
class Gaussian:
    mu3d: tuple       # local ENU meters
    scale: tuple      # 3 positive meters
    rot: tuple        # unit quaternion (w, x, y, z)
    sh: tuple         # degree-0 SH color (3 floats)
    alpha: float


@dataclass
class GaussianSet:
    """Columnar Gaussian collection plus the geodetic anchor of its ENU frame."""

    mu: np.ndarray      # (n, 3)
    scale: np.ndarray   # (n, 3)
    rot: np.ndarray     # (n, 4) quaternions (w, x, y, z)
    sh: np.ndarray      # (n, 3)
    alpha: np.ndarray   # (n,)
    origin: tuple = field(default=(0.0, 0.0, 0.0))

    def __post_init__(self):
        self.mu = np.atleast_2d(np.asarray(self.mu, np.float64))
        self.scale = np.atleast_2d(np.asarray(self.scale, np.float64))
        self.rot = np.atleast_2d(np.asarray(self.rot, np.float64))
        self.sh = np.atleast_2d(np.asarray(self.sh, np.float64))
        self.alpha = np.atleast_1d(np.asarray(self.alpha, np.float64))
        n = len(self)
        if not (self.scale.shape == (n, 3) and self.rot.shape == (n, 4)
                and self.sh.shape == (n, 3) and self.alpha.shape == (n,)):
            raise ValueError("inconsistent gaussian array shapes")
        if n and (np.any(self.scale <= 0) or np.any(self.alpha < 0) or np.any(self.alpha > 1)):
            raise ValueError("scales must be positive and alphas in [0, 1]")
        norms = np.linalg.norm(self.rot, axis=1)
        if n and np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("rotation quaternions must be unit norm")

    def __len__(self) -> int:
        return self.mu.shape[0]

    @classmethod
    def from_gaussians(cls, gaussians, origin=(0.0, 0.0, 0.0)) -> "GaussianSet":
        return cls(
            mu=np.array([g.mu3d for g in gaussians]),
            scale=np.array([g.scale for g in gaussians]),
            rot=np.array([g.rot for g in gaussians]),
            sh=np.array([g.sh for g in gaussians]),
            alpha=np.array([g.alpha for g in gaussians]),
            origin=origin,
        )


@dataclass(frozen=True)
class OrthoCamera:
    """Nadir orthographic camera over the flat local frame.

    Pixel (u, v) sees ground point (x0 + u*gsd, y0 - v*gsd); depth decreases
    with elevation so the sort still runs near-to-far.
    """

    x0: float
    y0: float
    gsd: float


@dataclass
class RenderReport:
    n_skipped_degenerate: int = 0


def estimate_gsd(rpc: RpcModel, h: float, u: float = 0.0, v: float = 0.0) -> float:
    """Ground distance in meters spanned by one pixel step at height h."""
    lat, lon, ok, _ = localize_grid(rpc, np.array([u, u + 1.0]), np.array([v, v]), h)
    if not ok.all():
        return 1.0
    e, n, _ = geo.geodetic_to_flat(lat, lon, np.full(2, h), (lat[0], lon[0], h))
    return float(np.hypot(e[1] - e[0], n[1] - n[0]))


def lift_heights(h_map: RasterF32, ref_rpc: RpcModel, origin=None, image: RasterF32 = None,
                 scale_raster: RasterF32 = None, alpha_raster: RasterF32 = None,
                 color_raster: RasterF32 = None, default_scale: float = None,
                 default_alpha: float = DEFAULT_ALPHA) -> GaussianSet:
    """One Gaussian per valid height-map pixel.

    Centers come from inverse RPC localization at the per-pixel height,
    converted to the flat metric ENU frame at ``origin`` (default: the scene
    point under the map center).  Attributes default to isotropic
    ground-sampling-distance scale, opacity 0.8, and the source image color;
    per-pixel attribute rasters override the defaults.
    """
    valid = h_map.valid_mask()
    if not valid.any():
        raise EmptyHeightMap("height map has no valid pixel")
    h, w = h_map.height, h_map.width
    hmap = h_map.plane(0).astype(np.float64)
    vv, uu = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    lat, lon, ok, _ = localize_grid(ref_rpc, uu, vv, hmap)
    keep = valid & ok
    if not keep.any():
        raise EmptyHeightMap("no pixel localized successfully")

    if origin is None:
        clat, clon, cok, _ = localize_grid(ref_rpc, (w - 1) / 2.0, (h - 1) / 2.0,
                                           float(np.median(hmap[keep])))
        origin = (float(clat), float(clon), 0.0)
    e, n, up = geo.geodetic_to_flat(lat[keep], lon[keep], hmap[keep], origin)
    mu = np.stack([e, n, up], axis=1)
    npts = mu.shape[0]

    if default_scale is None:
        default_scale = estimate_gsd(ref_rpc, float(np.median(hmap[keep])),
                                     (w - 1) / 2.0, (h - 1) / 2.0)
    if scale_raster is not None:
        s = scale_raster.data.astype(np.float64)[keep]
        scale = s.copy() if s.shape[1] == 3 else np.repeat(s, 3, axis=1)
    else:
        scale = np.full((npts, 3), default_scale)
    alpha = (alpha_raster.plane(0).astype(np.float64)[keep]
             if alpha_raster is not None else np.full(npts, default_alpha))
    if color_raster is not None:
        sh = color_raster.data.astype(np.float64)[keep]
    elif image is not None:
        img = image.data.astype(np.float64)
        if img.shape[2] == 1:
            img = np.repeat(img, 3, axis=2)
        sh = img[keep]
    else:
        sh = np.full((npts, 3), 0.5)
    rot = np.zeros((npts, 4))
    rot[:, 0] = 1.0
    return GaussianSet(mu=mu, scale=scale, rot=rot, sh=sh, alpha=np.clip(alpha, 0.0, 1.0),
                       origin=origin)


def _quat_to_rotmat(q):
    """(n, 4) quaternions (w, x, y, z) -> (n, 3, 3) rotation matrices."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    r = np.empty((q.shape[0], 3, 3))
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - w * z)
    r[:, 0, 2] = 2 * (x * z + w * y)
    r[:, 1, 0] = 2 * (x * y + w * z)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - w * x)
    r[:, 2, 0] = 2 * (x * z - w * y)
    r[:, 2, 1] = 2 * (y * z + w * x)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def _covariances(gset: GaussianSet):
    rm = _quat_to_rotmat(gset.rot)
    s2 = gset.scale ** 2
    return np.einsum("nij,nj,nkj->nik", rm, s2, rm)


def _project_pinhole(gset: GaussianSet, cam: PinholeFit):
    p = cam.p
    # make depths positive for points in front of the camera
    hom = np.hstack([gset.mu, np.ones((len(gset), 1))])
    prj = hom @ p.T
    if np.median(prj[:, 2]) < 0:
        prj = -prj
        p = -p
    depth = prj[:, 2]
    uv = prj[:, :2] / depth[:, None]
    # Jacobian of X -> (u, v) at each center (first-order EWA)
    a, b, c = p[0, :3], p[1, :3], p[2, :3]
    jac = np.empty((len(gset), 2, 3))
    jac[:, 0, :] = (a[None, :] - uv[:, 0:1] * c[None, :]) / depth[:, None]
    jac[:, 1, :] = (b[None, :] - uv[:, 1:2] * c[None, :]) / depth[:, None]
    return uv, depth, jac


def _project_ortho(gset: GaussianSet, cam: OrthoCamera):
    uv = np.stack([(gset.mu[:, 0] - cam.x0) / cam.gsd,
                   (cam.y0 - gset.mu[:, 1]) / cam.gsd], axis=1)
    # shifted so depths stay positive: the in-front-of-camera gate in render()
    # must not drop elevated points seen from straight above
    depth = (np.max(gset.mu[:, 2]) + 1.0) - gset.mu[:, 2]
    jac = np.zeros((len(gset), 2, 3))
    jac[:, 0, 0] = 1.0 / cam.gsd
    jac[:, 1, 1] = -1.0 / cam.gsd
    return uv, depth, jac


def render(gset: GaussianSet, cam, dims, background=(0.0, 0.0, 0.0),
           dilation: float = COV_DILATION, force=None):
    """Render a Gaussian set through a fitted pinhole or orthographic camera.

    Returns (RasterF32 H x W x 3, RenderReport).  Gaussians with a
    non-positive-definite projected covariance are skipped and counted.
    """
    if len(gset) == 0:
        raise EmptyGaussianSet("cannot render an empty gaussian set")
    h, w = int(dims[0]), int(dims[1])
    if isinstance(cam, OrthoCamera):
        uv, depth, jac = _project_ortho(gset, cam)
    else:
        uv, depth, jac = _project_pinhole(gset, cam)
    cov3 = _covariances(gset)
    cov2 = np.einsum("nij,njk,nlk->nil", jac, cov3, jac)
    cov2[:, 0, 0] += dilation
    cov2[:, 1, 1] += dilation

    det = cov2[:, 0, 0] * cov2[:, 1, 1] - cov2[:, 0, 1] * cov2[:, 1, 0]
    tr = cov2[:, 0, 0] + cov2[:, 1, 1]
    usable = (det > 0) & (cov2[:, 0, 0] > 0) & np.isfinite(det) & (depth > 0)
    report = RenderReport(n_skipped_degenerate=int((~usable).sum()))

    idx = np.flatnonzero(usable)
    order = idx[np.argsort(depth[idx], kind="stable")]
    conic = np.stack([cov2[order, 1, 1], -cov2[order, 0, 1], cov2[order, 0, 0]],
                     axis=1) / det[order, None]
    # 3-sigma radius from the major eigenvalue
    lam_max = 0.5 * tr[order] + np.sqrt(np.maximum(0.25 * tr[order] ** 2 - det[order], 0.0))
    radii = np.ceil(3.0 * np.sqrt(lam_max))

    img, _ = composite(uv[order], conic, gset.sh[order], gset.alpha[order],
                       radii, h, w, np.asarray(background, float), force=force)
    return RasterF32(img.astype(np.float32)), report


def save_gaussians(gset: GaussianSet, path: str | os.PathLike) -> None:
    with open(path, "wb") as f:
        f.write(_SKGS_MAGIC)
        f.write(struct.pack("<I", len(gset)))
        table = np.hstack([gset.mu, gset.scale, gset.rot, gset.sh, gset.alpha[:, None]])
        f.write(table.astype("<f4").tobytes())


def load_gaussians(path: str | os.PathLike, origin=(0.0, 0.0, 0.0)) -> GaussianSet:
    with open(path, "rb") as f:
        if f.read(len(_SKGS_MAGIC)) != _SKGS_MAGIC:
            raise MagicMismatch(f"{path}: not a SKGS file")
        raw = f.read(4)
        if len(raw) != 4:
            raise TruncatedFile(f"{path}: truncated count")
        (n,) = struct.unpack("<I", raw)
        buf = f.read(4 * 14 * n)
        if len(buf) != 4 * 14 * n:
            raise TruncatedFile(f"{path}: expected {n} gaussians")
    table = np.frombuffer(buf, dtype="<f4").reshape(n, 14).astype(np.float64)
    rot = table[:, 6:10]
    rot = rot / np.linalg.norm(rot, axis=1, keepdims=True)
    return GaussianSet(mu=table[:, 0:3], scale=table[:, 3:6], rot=rot,
                       sh=table[:, 10:13], alpha=np.clip(table[:, 13], 0.0, 1.0),
                       origin=origin)
