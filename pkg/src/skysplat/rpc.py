"""RPC00B-style rational polynomial camera model.

Forward projection evaluates ratios of 20-term cubic polynomials in
normalized (lat, lon, height); inverse localization at a fixed height runs
a damped Newton iteration on the 2x2 system in normalized (lat, lon).
A pinhole approximation can be fitted over an image patch by DLT, reporting
the mean fitting error in pixels.

Coefficient ordering (L = normalized lat, P = normalized lon, H = normalized
height):

    1, L, P, H, LP, LH, PH, L^2, P^2, H^2, PLH,
    L^3, LP^2, LH^2, L^2P, P^3, PH^2, L^2H, P^2H, H^3
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import geo
from .errors import (
    CoefficientCountError,
    DegenerateFit,
    DenominatorNearZero,
    NoConvergence,
    NonFinite,
    SchemaError,
    SingularJacobian,
)

DEN_EPS = 1e-10
JACOBIAN_DET_EPS = 1e-14
LOCALIZE_TOL_PX = 1e-6
LOCALIZE_MAX_ITER = 50

_SCALAR_KEYS = (
    "line_off", "samp_off", "lat_off", "lon_off", "hei_off",
    "line_scale", "samp_scale", "lat_scale", "lon_scale", "hei_scale",
)
_VECTOR_KEYS = ("line_num", "line_den", "samp_num", "samp_den")


class ExtrapolationWarning(UserWarning):
    """Input lies beyond 1.5x the normalized validity cube of the model."""


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float
    hei: float


@dataclass(frozen=True)
class PixelCoord:
    u: float  # sample (column)
    v: float  # line (row)


@dataclass(frozen=True, eq=False)
class RpcModel:
    line_off: float
    samp_off: float
    lat_off: float
    lon_off: float
    hei_off: float
    line_scale: float
    samp_scale: float
    lat_scale: float
    lon_scale: float
    hei_scale: float
    line_num: np.ndarray
    line_den: np.ndarray
    samp_num: np.ndarray
    samp_den: np.ndarray

    def __post_init__(self):
        for key in _VECTOR_KEYS:
            vec = np.asarray(getattr(self, key), dtype=np.float64)
            if vec.shape != (20,):
                raise CoefficientCountError(f"{key} has {vec.size} coefficients, expected 20")
            object.__setattr__(self, key, vec)
        for key in ("line_scale", "samp_scale", "lat_scale", "lon_scale", "hei_scale"):
            if not getattr(self, key) > 0:
                raise SchemaError(key)
        if abs(self.line_den[0]) < DEN_EPS or abs(self.samp_den[0]) < DEN_EPS:
            raise DenominatorNearZero("denominator constant term must be nonzero")

    def __eq__(self, other):
        if not isinstance(other, RpcModel):
            return NotImplemented
        return all(getattr(self, k) == getattr(other, k) for k in _SCALAR_KEYS) and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in _VECTOR_KEYS
        )


def poly_terms(L, P, H):
    """Stack of the 20 monomials, shape (..., 20)."""
    L, P, H = np.broadcast_arrays(np.asarray(L, float), np.asarray(P, float), np.asarray(H, float))
    one = np.ones_like(L)
    return np.stack(
        [one, L, P, H, L * P, L * H, P * H, L * L, P * P, H * H, P * L * H,
         L ** 3, L * P * P, L * H * H, L * L * P, P ** 3, P * H * H,
         L * L * H, P * P * H, H ** 3],
        axis=-1,
    )


def poly_eval(c, L, P, H):
    return (c[0] + c[1] * L + c[2] * P + c[3] * H
            + c[4] * L * P + c[5] * L * H + c[6] * P * H
            + c[7] * L * L + c[8] * P * P + c[9] * H * H
            + c[10] * P * L * H
            + c[11] * L ** 3 + c[12] * L * P * P + c[13] * L * H * H
            + c[14] * L * L * P + c[15] * P ** 3 + c[16] * P * H * H
            + c[17] * L * L * H + c[18] * P * P * H + c[19] * H ** 3)


def poly_dL(c, L, P, H):
    return (c[1] + c[4] * P + c[5] * H + 2 * c[7] * L + c[10] * P * H
            + 3 * c[11] * L * L + c[12] * P * P + c[13] * H * H
            + 2 * c[14] * L * P + 2 * c[17] * L * H)


def poly_dP(c, L, P, H):
    return (c[2] + c[4] * L + c[6] * H + 2 * c[8] * P + c[10] * L * H
            + 2 * c[12] * L * P + c[14] * L * L + 3 * c[15] * P * P
            + c[16] * H * H + 2 * c[18] * P * H)


def _check_cube(rpc: RpcModel, L, P, H):
    m = max(float(np.max(np.abs(L))), float(np.max(np.abs(P))), float(np.max(np.abs(H))))
    if m > 1.5:
        warnings.warn(
            f"input extends {m:.2f}x beyond the normalized validity cube; "
            "extrapolating the rational polynomials",
            ExtrapolationWarning,
            stacklevel=3,
        )


def project_grid(rpc: RpcModel, lat, lon, hei, check_cube: bool = True):
    """Vectorized forward projection.

    Returns (u, v, ok): pixel sample/line arrays plus a validity mask that is
    False where a denominator magnitude fell below DEN_EPS.
    """
    lat = np.asarray(lat, float)
    lon = np.asarray(lon, float)
    hei = np.asarray(hei, float)
    if not (np.all(np.isfinite(lat)) and np.all(np.isfinite(lon)) and np.all(np.isfinite(hei))):
        raise NonFinite("non-finite geodetic input to project")
    L = (lat - rpc.lat_off) / rpc.lat_scale
    P = (lon - rpc.lon_off) / rpc.lon_scale
    H = (hei - rpc.hei_off) / rpc.hei_scale
    if check_cube:
        _check_cube(rpc, L, P, H)
    ns, ds, nl, dl = _eval4(poly_terms(L, P, H), _coef_matrix(rpc))
    ok = (np.abs(dl) >= DEN_EPS) & (np.abs(ds) >= DEN_EPS)
    dl = np.where(np.abs(dl) < DEN_EPS, DEN_EPS, dl)
    ds = np.where(np.abs(ds) < DEN_EPS, DEN_EPS, ds)
    v = rpc.line_off + rpc.line_scale * nl / dl
    u = rpc.samp_off + rpc.samp_scale * ns / ds
    return u, v, ok


def project(rpc: RpcModel, g: GeoPoint) -> PixelCoord:
    u, v, ok = project_grid(rpc, g.lat, g.lon, g.hei)
    if not bool(ok):
        raise DenominatorNearZero(f"denominator below {DEN_EPS:g} at {g}")
    return PixelCoord(float(u), float(v))


def _coef_matrix(rpc):
    """(20, 4) coefficient stack: samp_num, samp_den, line_num, line_den."""
    return np.stack([rpc.samp_num, rpc.samp_den, rpc.line_num, rpc.line_den], axis=1)


def _deriv_matrix(rpc):
    """(10, 8) map from the first 10 monomials to the 8 partial derivatives.

    Columns: d(samp_num)/dL, d(samp_den)/dL, d(line_num)/dL, d(line_den)/dL,
    then the same four for d/dP.  Rows follow the monomial order
    [1, L, P, H, LP, LH, PH, L^2, P^2, H^2].
    """
    d = np.zeros((10, 8))
    for k, c in enumerate((rpc.samp_num, rpc.samp_den, rpc.line_num, rpc.line_den)):
        # d/dL
        d[0, k] = c[1]
        d[1, k] = 2 * c[7]
        d[2, k] = c[4]
        d[3, k] = c[5]
        d[4, k] = 2 * c[14]
        d[5, k] = 2 * c[17]
        d[6, k] = c[10]
        d[7, k] = 3 * c[11]
        d[8, k] = c[12]
        d[9, k] = c[13]
        # d/dP
        d[0, 4 + k] = c[2]
        d[1, 4 + k] = c[4]
        d[2, 4 + k] = 2 * c[8]
        d[3, 4 + k] = c[6]
        d[4, 4 + k] = 2 * c[12]
        d[5, 4 + k] = c[10]
        d[6, 4 + k] = 2 * c[18]
        d[7, 4 + k] = c[14]
        d[8, 4 + k] = 3 * c[15]
        d[9, 4 + k] = c[16]
    return d


def _eval4(terms, c4):
    """Evaluate the four rational-polynomial numerators/denominators at once."""
    vals = terms @ c4
    return vals[..., 0], vals[..., 1], vals[..., 2], vals[..., 3]


def _residual_px(rpc, L, P, H, tu_n, tv_n, terms=None):
    """Pixel-space residual of the normalized model output vs normalized target."""
    if terms is None:
        terms = poly_terms(L, P, H)
    ns, ds, nl, dl = _eval4(terms, _coef_matrix(rpc))
    bad = (np.abs(dl) < DEN_EPS) | (np.abs(ds) < DEN_EPS)
    dl = np.where(np.abs(dl) < DEN_EPS, DEN_EPS, dl)
    ds = np.where(np.abs(ds) < DEN_EPS, DEN_EPS, ds)
    fu = ns / ds
    fv = nl / dl
    ru = (fu - tu_n) * rpc.samp_scale
    rv = (fv - tv_n) * rpc.line_scale
    err = np.hypot(ru, rv)
    return ru, rv, np.where(bad, np.inf, err)


def localize_grid(rpc: RpcModel, u, v, hei, init=None,
                  max_iter: int = LOCALIZE_MAX_ITER, tol: float = LOCALIZE_TOL_PX):
    """Vectorized inverse localization at fixed height.

    Solves project(lat, lon, hei) = (u, v) by damped Newton iteration in the
    normalized (lat, lon) plane, starting from the model offsets (or ``init``
    = (lat, lon) arrays for warm starts).  Returns (lat, lon, ok, err) where
    ok flags pixels converged below ``tol`` pixels with a well-conditioned
    Jacobian.
    """
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    hei = np.asarray(hei, float)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v)) and np.all(np.isfinite(hei))):
        raise NonFinite("non-finite input to localize")
    u, v, hei = np.broadcast_arrays(u, v, hei)
    shape = u.shape

    H = ((hei - rpc.hei_off) / rpc.hei_scale).ravel()
    tu_n = ((u - rpc.samp_off) / rpc.samp_scale).ravel()
    tv_n = ((v - rpc.line_off) / rpc.line_scale).ravel()
    if init is None:
        L = np.zeros_like(tu_n)
        P = np.zeros_like(tu_n)
    else:
        L = ((np.asarray(init[0], float) - rpc.lat_off) / rpc.lat_scale).ravel().copy()
        P = ((np.asarray(init[1], float) - rpc.lon_off) / rpc.lon_scale).ravel().copy()

    # err == inf marks pixels with a singular Jacobian or vanishing denominator
    ru, rv, err = _residual_px(rpc, L, P, H, tu_n, tv_n)
    for _ in range(max_iter):
        active = (err >= tol) & np.isfinite(err)
        if not active.any():
            break
        La, Pa, Ha = L[active], P[active], H[active]
        terms = poly_terms(La, Pa, Ha)
        ns, ds, nl, dl = _eval4(terms, _coef_matrix(rpc))
        dl = np.where(np.abs(dl) < DEN_EPS, DEN_EPS, dl)
        ds = np.where(np.abs(ds) < DEN_EPS, DEN_EPS, ds)
        # all eight partial derivatives in one product with the monomials
        dv = terms[..., :10] @ _deriv_matrix(rpc)
        dsn_L, dsd_L, dln_L, dld_L = dv[..., 0], dv[..., 1], dv[..., 2], dv[..., 3]
        dsn_P, dsd_P, dln_P, dld_P = dv[..., 4], dv[..., 5], dv[..., 6], dv[..., 7]
        # d(num/den)/dx = (num' den - num den') / den^2
        ju_L = (dsn_L * ds - ns * dsd_L) / ds ** 2
        ju_P = (dsn_P * ds - ns * dsd_P) / ds ** 2
        jv_L = (dln_L * dl - nl * dld_L) / dl ** 2
        jv_P = (dln_P * dl - nl * dld_P) / dl ** 2
        det = ju_L * jv_P - ju_P * jv_L
        bad = np.abs(det) < JACOBIAN_DET_EPS
        det = np.where(bad, 1.0, det)
        fu = ns / ds - tu_n[active]
        fv = nl / dl - tv_n[active]
        step_L = (jv_P * fu - ju_P * fv) / det
        step_P = (-jv_L * fu + ju_L * fv) / det

        # damped update: halve the step until the pixel residual stops growing
        lam = np.ones_like(step_L)
        newL = La - lam * step_L
        newP = Pa - lam * step_P
        _, _, new_err = _residual_px(rpc, newL, newP, Ha, tu_n[active], tv_n[active])
        for _bt in range(12):
            worse = new_err > err[active]
            if not worse.any():
                break
            lam = np.where(worse, lam * 0.5, lam)
            newL = np.where(worse, La - lam * step_L, newL)
            newP = np.where(worse, Pa - lam * step_P, newP)
            _, _, new_err = _residual_px(rpc, newL, newP, Ha, tu_n[active], tv_n[active])

        idx = np.flatnonzero(active)
        L[idx] = np.where(bad, La, newL)
        P[idx] = np.where(bad, Pa, newP)
        err[idx] = np.where(bad, np.inf, new_err)

    ok = err < tol
    lat = (rpc.lat_off + L * rpc.lat_scale).reshape(shape)
    lon = (rpc.lon_off + P * rpc.lon_scale).reshape(shape)
    return lat, lon, ok.reshape(shape), err.reshape(shape)


def localize(rpc: RpcModel, p: PixelCoord, hei: float) -> GeoPoint:
    lat, lon, ok, err = localize_grid(rpc, p.u, p.v, hei)
    if not bool(ok):
        if not np.isfinite(float(err)):
            raise SingularJacobian(f"localization Jacobian singular near ({p.u}, {p.v})")
        raise NoConvergence(float(err))
    return GeoPoint(float(lat), float(lon), float(hei))


@dataclass
class PinholeFit:
    """3x4 projection matrix (arbitrary scale) approximating an RPC over a patch."""

    p: np.ndarray
    patch_bounds: tuple  # (u0, v0, u1, v1) pixels
    height_range: tuple  # (h_min, h_max) meters
    mfe: float
    enu_origin: tuple = field(default=(0.0, 0.0, 0.0))  # geodetic anchor of the flat frame

    def project(self, xyz):
        """Project Nx3 (or 3,) local flat-ENU points to pixels."""
        pts = np.atleast_2d(np.asarray(xyz, float))
        hom = np.hstack([pts, np.ones((pts.shape[0], 1))])
        prj = hom @ self.p.T
        uv = prj[:, :2] / prj[:, 2:3]
        return uv if np.asarray(xyz).ndim > 1 else uv[0]

    def depths(self, xyz):
        pts = np.atleast_2d(np.asarray(xyz, float))
        hom = np.hstack([pts, np.ones((pts.shape[0], 1))])
        return hom @ self.p[2]


def fit_pinhole(rpc: RpcModel, patch, hrange, grid=(8, 8, 4)) -> PinholeFit:
    """Least-squares DLT fit of a 3x4 matrix over a regular (u, v, h) grid.

    Geodetic sample points are converted to the flat local ENU frame anchored
    at the patch center; ``mfe`` is the mean reprojection error in pixels over
    the sample grid.
    """
    u0, v0, u1, v1 = (float(x) for x in patch)
    h0, h1 = (float(x) for x in hrange)
    if u1 <= u0 or v1 <= v0:
        raise DegenerateFit(f"empty patch {patch}")
    if h1 <= h0:
        raise DegenerateFit(f"degenerate height range {hrange}")
    nu, nv, nh = (max(int(n), 2) for n in grid)
    nu, nv = max(nu, 8), max(nv, 8)
    nh = max(nh, 4)
    uu, vv, hh = np.meshgrid(
        np.linspace(u0, u1, nu), np.linspace(v0, v1, nv), np.linspace(h0, h1, nh),
        indexing="ij",
    )
    lat, lon, ok, err = localize_grid(rpc, uu, vv, hh)
    if not ok.all():
        raise NoConvergence(float(np.max(err[~ok])))

    hmid = 0.5 * (h0 + h1)
    clat, clon, cok, cerr = localize_grid(rpc, 0.5 * (u0 + u1), 0.5 * (v0 + v1), hmid)
    if not bool(cok):
        raise NoConvergence(float(cerr))
    origin = (float(clat), float(clon), hmid)
    e, n, up = geo.geodetic_to_flat(lat, lon, hh, origin)
    xyz = np.stack([e.ravel(), n.ravel(), up.ravel()], axis=1)
    uv = np.stack([uu.ravel(), vv.ravel()], axis=1)

    centered = xyz - xyz.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[2] < 1e-9 * max(sv[0], 1.0):
        raise DegenerateFit("sample points are coplanar")

    p = _dlt(xyz, uv)
    reproj = _pinhole_project(p, xyz)
    mfe = float(np.mean(np.linalg.norm(reproj - uv, axis=1)))
    return PinholeFit(p=p, patch_bounds=(u0, v0, u1, v1), height_range=(h0, h1),
                      mfe=mfe, enu_origin=origin)


def _pinhole_project(p, xyz):
    hom = np.hstack([xyz, np.ones((xyz.shape[0], 1))])
    prj = hom @ p.T
    return prj[:, :2] / prj[:, 2:3]


def _dlt(xyz, uv):
    """Normalized DLT for a 3x4 projection matrix."""
    c3 = xyz.mean(axis=0)
    s3 = np.sqrt(3.0) / max(np.mean(np.linalg.norm(xyz - c3, axis=1)), 1e-12)
    t3 = np.diag([s3, s3, s3, 1.0])
    t3[:3, 3] = -s3 * c3
    c2 = uv.mean(axis=0)
    s2 = np.sqrt(2.0) / max(np.mean(np.linalg.norm(uv - c2, axis=1)), 1e-12)
    t2 = np.array([[s2, 0.0, -s2 * c2[0]], [0.0, s2, -s2 * c2[1]], [0.0, 0.0, 1.0]])

    xn = np.hstack([xyz, np.ones((xyz.shape[0], 1))]) @ t3.T
    un = np.hstack([uv, np.ones((uv.shape[0], 1))]) @ t2.T
    n = xyz.shape[0]
    a = np.zeros((2 * n, 12))
    a[0::2, 0:4] = xn
    a[0::2, 8:12] = -un[:, 0:1] * xn
    a[1::2, 4:8] = xn
    a[1::2, 8:12] = -un[:, 1:2] * xn
    _, _, vt = np.linalg.svd(a, full_matrices=False)
    pn = vt[-1].reshape(3, 4)
    p = np.linalg.inv(t2) @ pn @ t3
    if np.linalg.matrix_rank(p) < 3:
        raise DegenerateFit("fitted projection matrix is rank-deficient")
    # normalize so the depth row has unit leading norm (cosmetic; mfe is scale-invariant)
    return p / np.linalg.norm(p[2, :3])


def parse_rpc(text: str) -> RpcModel:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise SchemaError("top-level object")
    kwargs = {}
    for key in _SCALAR_KEYS:
        if key not in obj or not isinstance(obj[key], (int, float)) or isinstance(obj[key], bool):
            raise SchemaError(key)
        kwargs[key] = float(obj[key])
    for key in _VECTOR_KEYS:
        if key not in obj or not isinstance(obj[key], list):
            raise SchemaError(key)
        if len(obj[key]) != 20:
            raise CoefficientCountError(f"{key} has {len(obj[key])} entries, expected 20")
        if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in obj[key]):
            raise SchemaError(key)
        kwargs[key] = np.array(obj[key], dtype=np.float64)
    return RpcModel(**kwargs)


def serialize_rpc(rpc: RpcModel) -> str:
    obj = {key: getattr(rpc, key) for key in _SCALAR_KEYS}
    obj.update({key: list(getattr(rpc, key)) for key in _VECTOR_KEYS})
    return json.dumps(obj, indent=2)


def load_rpc(path: str | os.PathLike) -> RpcModel:
    with open(path, "r") as f:
        return parse_rpc(f.read())


def save_rpc(rpc: RpcModel, path: str | os.PathLike) -> None:
    with open(path, "w") as f:
        f.write(serialize_rpc(rpc))
        f.write("\n")


def identity_like_rpc(line_off=0.0, samp_off=0.0, lat_off=0.0, lon_off=0.0, hei_off=0.0,
                      line_scale=1.0, samp_scale=1.0, lat_scale=1.0, lon_scale=1.0,
                      hei_scale=1.0) -> RpcModel:
    """RPC whose line selects the lat term and sample the lon term (unit ratio)."""
    line_num = np.zeros(20)
    line_num[1] = 1.0  # L term
    samp_num = np.zeros(20)
    samp_num[2] = 1.0  # P term
    den = np.zeros(20)
    den[0] = 1.0
    return RpcModel(line_off, samp_off, lat_off, lon_off, hei_off,
                    line_scale, samp_scale, lat_scale, lon_scale, hei_scale,
                    line_num, den.copy(), samp_num, den.copy())
