"""Hot numeric kernels with numba and pure-numpy implementations.

Two kernels dominate runtime: front-to-back splat compositing and
heightfield ray casting.  Each has an @njit variant and a numpy twin
computing the same values; ``skysplat._accel.numba_enabled()`` picks the
path (override with SKYSPLAT_DISABLE_NUMBA=1).
"""

import math

import numpy as np

from ._accel import numba_enabled
from .geo import EARTH_RADIUS

TRANSMITTANCE_EPS = 1e-4
ALPHA_MAX = 0.999
CUTOFF_Q = 9.0  # 3-sigma ellipse in conic form


# ---------------------------------------------------------------------------
# splat compositing
# ---------------------------------------------------------------------------

def composite_numpy(means, conics, colors, alphas, radii, h, w, bg):
    """Front-to-back alpha compositing of depth-sorted 2D Gaussians.

    means (n,2) pixel centers, conics (n,3) inverse-covariance (a, b, c),
    colors (n,3), alphas (n,), radii (n,) pixel cull radii.  Returns
    (image (h,w,3), transmittance (h,w)).
    """
    img = np.zeros((h, w, 3), dtype=np.float64)
    trans = np.ones((h, w), dtype=np.float64)
    for i in range(means.shape[0]):
        mx, my = means[i]
        r = radii[i]
        x0 = max(int(math.floor(mx - r)), 0)
        x1 = min(int(math.ceil(mx + r)), w - 1)
        y0 = max(int(math.floor(my - r)), 0)
        y1 = min(int(math.ceil(my + r)), h - 1)
        if x1 < x0 or y1 < y0:
            continue
        ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
        dx = xs - mx
        dy = ys - my
        ca, cb, cc = conics[i]
        q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
        t = trans[y0:y1 + 1, x0:x1 + 1]
        a = np.where((q <= CUTOFF_Q) & (t >= TRANSMITTANCE_EPS),
                     np.minimum(alphas[i] * np.exp(-0.5 * q), ALPHA_MAX), 0.0)
        img[y0:y1 + 1, x0:x1 + 1] += (a * t)[:, :, None] * colors[i][None, None, :]
        trans[y0:y1 + 1, x0:x1 + 1] = t * (1.0 - a)
    img += trans[:, :, None] * np.asarray(bg, float)[None, None, :]
    return img, trans


def _composite_numba_impl(means, conics, colors, alphas, radii, h, w, bg):
    img = np.zeros((h, w, 3), dtype=np.float64)
    trans = np.ones((h, w), dtype=np.float64)
    n = means.shape[0]
    for i in range(n):
        mx = means[i, 0]
        my = means[i, 1]
        r = radii[i]
        x0 = max(int(math.floor(mx - r)), 0)
        x1 = min(int(math.ceil(mx + r)), w - 1)
        y0 = max(int(math.floor(my - r)), 0)
        y1 = min(int(math.ceil(my + r)), h - 1)
        ca = conics[i, 0]
        cb = conics[i, 1]
        cc = conics[i, 2]
        for y in range(y0, y1 + 1):
            dy = y - my
            for x in range(x0, x1 + 1):
                t = trans[y, x]
                if t < TRANSMITTANCE_EPS:
                    continue
                dx = x - mx
                q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
                if q > CUTOFF_Q:
                    continue
                a = alphas[i] * math.exp(-0.5 * q)
                if a > ALPHA_MAX:
                    a = ALPHA_MAX
                w_i = a * t
                img[y, x, 0] += w_i * colors[i, 0]
                img[y, x, 1] += w_i * colors[i, 1]
                img[y, x, 2] += w_i * colors[i, 2]
                trans[y, x] = t * (1.0 - a)
    for y in range(h):
        for x in range(w):
            img[y, x, 0] += trans[y, x] * bg[0]
            img[y, x, 1] += trans[y, x] * bg[1]
            img[y, x, 2] += trans[y, x] * bg[2]
    return img, trans


# ---------------------------------------------------------------------------
# heightfield ray casting
# ---------------------------------------------------------------------------

def _march_setup(cam_c, dirs, hmin, hmax, step):
    du = dirs[..., 2]
    descending = du < -1e-9
    du_safe = np.where(descending, du, -1.0)
    t0 = np.maximum((hmax + 1.0 - cam_c[2]) / du_safe, 0.0)
    t1 = (hmin - 1.0 - cam_c[2]) / du_safe
    dt = step / np.abs(du_safe)
    return descending, t0, t1, dt


def raycast_numpy(cam_c, dirs, terr, tx0, ty0, tres, hmin, hmax, step,
                  e0, basis, lat0_rad, lon0_rad):
    """March rays against a heightfield raster defined on flat ground coords.

    cam_c: world-ENU camera center (3,). dirs: (..., 3) unit ray directions.
    terr: (th, tw) heights sampled at ground coords x = tx0 + col*tres,
    y = ty0 + row*tres.  Returns (hit, h_geo, gx, gy): geodetic height of the
    surface hit and its flat ground coordinates.
    """
    shape = dirs.shape[:-1]
    dirs2 = dirs.reshape(-1, 3)
    n = dirs2.shape[0]
    descending, t0, t1, dt = _march_setup(cam_c, dirs2, hmin, hmax, step)

    def phi(t, act):
        w = cam_c[None, :] + t[:, None] * dirs2[act]
        h, gx, gy = _world_to_ground_numpy(w, e0, basis, lat0_rad, lon0_rad)
        tv = _terr_sample_numpy(terr, (gx - tx0) / tres, (gy - ty0) / tres, hmin)
        return h - tv, h, gx, gy

    hit = np.zeros(n, dtype=bool)
    lo = np.zeros(n)
    hi = np.zeros(n)
    t = t0.copy()
    active = descending.copy()
    idx = np.flatnonzero(active)
    prev_t = t0[idx].copy()
    p, _, _, _ = phi(prev_t, idx)
    # discard rays already below the surface at the start of the march
    ok = p > 0
    idx = idx[ok]
    prev_t = prev_t[ok]
    prev_p = p[ok]
    while idx.size:
        cur_t = np.minimum(prev_t + dt[idx], t1[idx])
        p, _, _, _ = phi(cur_t, idx)
        crossed = p <= 0
        ci = idx[crossed]
        hit[ci] = True
        lo[ci] = prev_t[crossed]
        hi[ci] = cur_t[crossed]
        done = crossed | (cur_t >= t1[idx])
        idx = idx[~done]
        prev_t = cur_t[~done]
        prev_p = p[~done]
    del prev_p

    h_out = np.full(n, np.nan)
    gx_out = np.full(n, np.nan)
    gy_out = np.full(n, np.nan)
    hidx = np.flatnonzero(hit)
    if hidx.size:
        a = lo[hidx]
        b = hi[hidx]
        for _ in range(30):
            mid = 0.5 * (a + b)
            p, _, _, _ = phi(mid, hidx)
            below = p <= 0
            b = np.where(below, mid, b)
            a = np.where(below, a, mid)
        tstar = 0.5 * (a + b)
        _, h, gx, gy = phi(tstar, hidx)
        h_out[hidx] = h
        gx_out[hidx] = gx
        gy_out[hidx] = gy
    return (hit.reshape(shape), h_out.reshape(shape),
            gx_out.reshape(shape), gy_out.reshape(shape))


def _world_to_ground_numpy(w, e0, basis, lat0_rad, lon0_rad):
    p = e0[None, :] + w @ basis
    r = np.sqrt((p * p).sum(axis=1))
    h = r - EARTH_RADIUS
    lat = np.arcsin(np.clip(p[:, 2] / r, -1.0, 1.0))
    lon = np.arctan2(p[:, 1], p[:, 0])
    gx = EARTH_RADIUS * math.cos(lat0_rad) * (lon - lon0_rad)
    gy = EARTH_RADIUS * (lat - lat0_rad)
    return h, gx, gy


def _terr_sample_numpy(terr, x, y, hmin):
    th, tw = terr.shape
    inb = (x >= 0) & (x <= tw - 1) & (y >= 0) & (y <= th - 1)
    xc = np.clip(np.where(inb, x, 0.0), 0, tw - 1)
    yc = np.clip(np.where(inb, y, 0.0), 0, th - 1)
    x0 = np.minimum(np.floor(xc).astype(np.int64), tw - 2)
    y0 = np.minimum(np.floor(yc).astype(np.int64), th - 2)
    fx = xc - x0
    fy = yc - y0
    v = (terr[y0, x0] * (1 - fx) * (1 - fy) + terr[y0, x0 + 1] * fx * (1 - fy)
         + terr[y0 + 1, x0] * (1 - fx) * fy + terr[y0 + 1, x0 + 1] * fx * fy)
    # off-raster counts as a miss: report terrain far below the height range
    return np.where(inb, v, hmin - 1e6)


def _raycast_numba_impl(cam_c, dirs, terr, tx0, ty0, tres, hmin, hmax, step,
                        e0, basis, lat0_rad, lon0_rad):
    n = dirs.shape[0]
    hit = np.zeros(n, dtype=np.bool_)
    h_out = np.full(n, np.nan)
    gx_out = np.full(n, np.nan)
    gy_out = np.full(n, np.nan)
    th, tw = terr.shape
    coslat0 = math.cos(lat0_rad)
    for i in range(n):
        dx = dirs[i, 0]
        dy = dirs[i, 1]
        du = dirs[i, 2]
        if du >= -1e-9:
            continue
        t0 = (hmax + 1.0 - cam_c[2]) / du
        if t0 < 0.0:
            t0 = 0.0
        t1 = (hmin - 1.0 - cam_c[2]) / du
        dt = step / abs(du)

        prev_t = t0
        prev_p = 1.0
        found = False
        lo = 0.0
        hi = 0.0
        first = True
        t = t0
        while t < t1 + dt:
            if t > t1:
                t = t1
            # world point -> geodetic -> ground coords -> terrain sample
            wx = cam_c[0] + t * dx
            wy = cam_c[1] + t * dy
            wz = cam_c[2] + t * du
            px = e0[0] + wx * basis[0, 0] + wy * basis[1, 0] + wz * basis[2, 0]
            py = e0[1] + wx * basis[0, 1] + wy * basis[1, 1] + wz * basis[2, 1]
            pz = e0[2] + wx * basis[0, 2] + wy * basis[1, 2] + wz * basis[2, 2]
            r = math.sqrt(px * px + py * py + pz * pz)
            h = r - EARTH_RADIUS
            lat = math.asin(min(max(pz / r, -1.0), 1.0))
            lon = math.atan2(py, px)
            gx = EARTH_RADIUS * coslat0 * (lon - lon0_rad)
            gy = EARTH_RADIUS * (lat - lat0_rad)
            xg = (gx - tx0) / tres
            yg = (gy - ty0) / tres
            if xg < 0.0 or xg > tw - 1 or yg < 0.0 or yg > th - 1:
                tv = hmin - 1e6
            else:
                x0i = int(xg)
                y0i = int(yg)
                if x0i > tw - 2:
                    x0i = tw - 2
                if y0i > th - 2:
                    y0i = th - 2
                fx = xg - x0i
                fy = yg - y0i
                tv = (terr[y0i, x0i] * (1 - fx) * (1 - fy)
                      + terr[y0i, x0i + 1] * fx * (1 - fy)
                      + terr[y0i + 1, x0i] * (1 - fx) * fy
                      + terr[y0i + 1, x0i + 1] * fx * fy)
            p = h - tv
            if first:
                if p <= 0.0:
                    break
                first = False
            elif p <= 0.0:
                found = True
                lo = prev_t
                hi = t
                break
            prev_t = t
            prev_p = p
            if t >= t1:
                break
            t += dt
        if not found:
            continue
        for _ in range(30):
            mid = 0.5 * (lo + hi)
            wx = cam_c[0] + mid * dx
            wy = cam_c[1] + mid * dy
            wz = cam_c[2] + mid * du
            px = e0[0] + wx * basis[0, 0] + wy * basis[1, 0] + wz * basis[2, 0]
            py = e0[1] + wx * basis[0, 1] + wy * basis[1, 1] + wz * basis[2, 1]
            pz = e0[2] + wx * basis[0, 2] + wy * basis[1, 2] + wz * basis[2, 2]
            r = math.sqrt(px * px + py * py + pz * pz)
            h = r - EARTH_RADIUS
            lat = math.asin(min(max(pz / r, -1.0), 1.0))
            lon = math.atan2(py, px)
            gx = EARTH_RADIUS * coslat0 * (lon - lon0_rad)
            gy = EARTH_RADIUS * (lat - lat0_rad)
            xg = (gx - tx0) / tres
            yg = (gy - ty0) / tres
            if xg < 0.0 or xg > tw - 1 or yg < 0.0 or yg > th - 1:
                tv = hmin - 1e6
            else:
                x0i = int(xg)
                y0i = int(yg)
                if x0i > tw - 2:
                    x0i = tw - 2
                if y0i > th - 2:
                    y0i = th - 2
                fx = xg - x0i
                fy = yg - y0i
                tv = (terr[y0i, x0i] * (1 - fx) * (1 - fy)
                      + terr[y0i, x0i + 1] * fx * (1 - fy)
                      + terr[y0i + 1, x0i] * (1 - fx) * fy
                      + terr[y0i + 1, x0i + 1] * fx * fy)
            if h - tv <= 0.0:
                hi = mid
            else:
                lo = mid
        mid = 0.5 * (lo + hi)
        wx = cam_c[0] + mid * dx
        wy = cam_c[1] + mid * dy
        wz = cam_c[2] + mid * du
        px = e0[0] + wx * basis[0, 0] + wy * basis[1, 0] + wz * basis[2, 0]
        py = e0[1] + wx * basis[0, 1] + wy * basis[1, 1] + wz * basis[2, 1]
        pz = e0[2] + wx * basis[0, 2] + wy * basis[1, 2] + wz * basis[2, 2]
        r = math.sqrt(px * px + py * py + pz * pz)
        lat = math.asin(min(max(pz / r, -1.0), 1.0))
        lon = math.atan2(py, px)
        hit[i] = True
        h_out[i] = r - EARTH_RADIUS
        gx_out[i] = EARTH_RADIUS * coslat0 * (lon - lon0_rad)
        gy_out[i] = EARTH_RADIUS * (lat - lat0_rad)
    return hit, h_out, gx_out, gy_out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

_composite_numba = None
_raycast_numba = None


def _get_numba_kernels():
    global _composite_numba, _raycast_numba
    if _composite_numba is None:
        from numba import njit
        _composite_numba = njit(cache=True)(_composite_numba_impl)
        _raycast_numba = njit(cache=True)(_raycast_numba_impl)
    return _composite_numba, _raycast_numba


def composite(means, conics, colors, alphas, radii, h, w, bg, force=None):
    """Dispatching front-to-back compositor; force in {None, 'numba', 'numpy'}."""
    means = np.ascontiguousarray(means, dtype=np.float64)
    conics = np.ascontiguousarray(conics, dtype=np.float64)
    colors = np.ascontiguousarray(colors, dtype=np.float64)
    alphas = np.ascontiguousarray(alphas, dtype=np.float64)
    radii = np.ascontiguousarray(radii, dtype=np.float64)
    bg = np.ascontiguousarray(bg, dtype=np.float64)
    use_numba = numba_enabled() if force is None else force == "numba"
    if use_numba:
        fn, _ = _get_numba_kernels()
        return fn(means, conics, colors, alphas, radii, h, w, bg)
    return composite_numpy(means, conics, colors, alphas, radii, h, w, bg)


def raycast(cam_c, dirs, terr, tx0, ty0, tres, hmin, hmax, step,
            e0, basis, lat0_rad, lon0_rad, force=None):
    """Dispatching heightfield ray caster; see raycast_numpy for semantics."""
    cam_c = np.ascontiguousarray(cam_c, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    terr = np.ascontiguousarray(terr, dtype=np.float64)
    e0 = np.ascontiguousarray(e0, dtype=np.float64)
    basis = np.ascontiguousarray(basis, dtype=np.float64)
    use_numba = numba_enabled() if force is None else force == "numba"
    if use_numba:
        _, fn = _get_numba_kernels()
        shape = dirs.shape[:-1]
        flat = np.ascontiguousarray(dirs.reshape(-1, 3))
        hit, h, gx, gy = fn(cam_c, flat, terr, float(tx0), float(ty0), float(tres),
                            float(hmin), float(hmax), float(step),
                            e0, basis, float(lat0_rad), float(lon0_rad))
        return (hit.reshape(shape), h.reshape(shape),
                gx.reshape(shape), gy.reshape(shape))
    return raycast_numpy(cam_c, dirs, terr, tx0, ty0, tres, hmin, hmax, step,
                         e0, basis, lat0_rad, lon0_rad)
