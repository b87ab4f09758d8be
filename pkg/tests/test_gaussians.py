import numpy as np
import pytest

from skysplat import geo
from skysplat.errors import EmptyGaussianSet, EmptyHeightMap, MagicMismatch, TruncatedFile
from skysplat.gaussians import (
    GaussianSet,
    OrthoCamera,
    estimate_gsd,
    lift_heights,
    load_gaussians,
    render,
    save_gaussians,
)
from skysplat.metrics import psnr
from skysplat.raster import RasterF32
from skysplat.rpc import fit_pinhole

rng = np.random.default_rng(17)

_CAM = OrthoCamera(x0=-2.0, y0=2.0, gsd=1.0)  # pixel (2,2) sees ground (0,0)


def _gset(mus, colors, alphas, scale=1.0):
    n = len(mus)
    return GaussianSet(mu=mus, scale=np.full((n, 3), scale),
                       rot=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
                       sh=colors, alpha=alphas)


# ---------------------------------------------------------------------------
# closed-form compositing
# ---------------------------------------------------------------------------

def test_single_gaussian_center_value():
    g = _gset([[0.0, 0.0, 10.0]], [[1.0, 0.0, 0.0]], [0.5])
    img, rep = render(g, _CAM, (5, 5))
    assert rep.n_skipped_degenerate == 0
    assert np.allclose(img.data[2, 2], [0.5, 0.0, 0.0], atol=1e-6)


def test_two_stacked_gaussians_closed_form():
    # front (higher) then back, each alpha 0.5 over blue background:
    # 0.5*c_front + 0.25*c_back + 0.25*bg at the shared center pixel
    g = _gset([[0.0, 0.0, 0.0], [0.0, 0.0, 5.0]],
              [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]], [0.5, 0.5])
    img, _ = render(g, _CAM, (5, 5), background=(0.0, 0.0, 1.0))
    assert np.allclose(img.data[2, 2], [0.5, 0.25, 0.25], atol=1e-6)


def test_render_order_invariance():
    mus = np.column_stack([rng.uniform(-2, 2, 12), rng.uniform(-2, 2, 12),
                           rng.uniform(0, 8, 12)])
    colors = rng.uniform(size=(12, 3))
    alphas = rng.uniform(0.1, 0.9, 12)
    g = _gset(mus, colors, alphas)
    perm = rng.permutation(12)
    g2 = _gset(mus[perm], colors[perm], alphas[perm])
    a, _ = render(g, _CAM, (5, 5))
    b, _ = render(g2, _CAM, (5, 5))
    assert np.allclose(a.data, b.data, atol=1e-6)


def test_all_alpha_zero_gives_background():
    g = _gset([[0.0, 0.0, 1.0]], [[1.0, 1.0, 1.0]], [0.0])
    img, _ = render(g, _CAM, (5, 5), background=(0.2, 0.4, 0.6))
    assert np.allclose(img.data, np.array([0.2, 0.4, 0.6]), atol=1e-6)


def test_empty_set_raises():
    g = GaussianSet(mu=np.zeros((0, 3)), scale=np.zeros((0, 3)),
                    rot=np.zeros((0, 4)), sh=np.zeros((0, 3)), alpha=np.zeros(0))
    with pytest.raises(EmptyGaussianSet):
        render(g, _CAM, (4, 4))


def test_brute_force_pixel_oracle():
    """Re-derive the front-to-back recursion independently for 20 gaussians."""
    n = 20
    mus = np.column_stack([rng.uniform(0, 8, n), rng.uniform(-8, 0, n),
                           rng.uniform(0, 6, n)])
    colors = rng.uniform(size=(n, 3))
    alphas = rng.uniform(0.05, 0.95, n)
    scales = rng.uniform(0.5, 2.0, n)
    g = GaussianSet(mu=mus, scale=np.repeat(scales[:, None], 3, axis=1),
                    rot=np.tile([1.0, 0, 0, 0], (n, 1)), sh=colors, alpha=alphas)
    cam = OrthoCamera(x0=0.0, y0=0.0, gsd=1.0)
    h = w = 9
    img, _ = render(g, cam, (h, w), background=(0.1, 0.2, 0.3))

    # oracle: axis-aligned gaussians; 2D cov = scale^2 * I / gsd^2 + 0.3 I
    order = np.argsort(-mus[:, 2], kind="stable")  # near (high) to far
    expect = np.zeros((h, w, 3))
    for py in range(h):
        for px in range(w):
            t = 1.0
            acc = np.zeros(3)
            for i in order:
                var = scales[i] ** 2 + 0.3
                u = mus[i, 0] - cam.x0
                v = cam.y0 - mus[i, 1]
                q = ((px - u) ** 2 + (py - v) ** 2) / var
                lam = var
                radius = np.ceil(3.0 * np.sqrt(lam))
                if px < np.floor(u - radius) or px > np.ceil(u + radius):
                    continue
                if py < np.floor(v - radius) or py > np.ceil(v + radius):
                    continue
                if q > 9.0 or t < 1e-4:
                    continue
                a = min(alphas[i] * np.exp(-0.5 * q), 0.999)
                acc += a * t * colors[i]
                t *= 1.0 - a
            expect[py, px] = acc + t * np.array([0.1, 0.2, 0.3])
    assert np.max(np.abs(img.data - expect)) < 1e-5


# ---------------------------------------------------------------------------
# lifting
# ---------------------------------------------------------------------------

def test_lift_heights_counts_and_z(oracle_pair):
    _, rpc = oracle_pair
    valid = np.ones((16, 16), bool)
    valid[0, :] = False
    hmap = RasterF32(rng.uniform(5.0, 25.0, (16, 16)).astype(np.float32), valid)
    gset = lift_heights(hmap, rpc)
    assert len(gset) == int(valid.sum())
    assert np.max(np.abs(gset.mu[:, 2] - hmap.plane(0)[valid])) < 1e-3


def test_lift_heights_positions_against_localization(oracle_pair):
    _, rpc = oracle_pair
    from skysplat.rpc import localize_grid

    hmap = RasterF32(np.full((8, 8), 12.0, np.float32))
    origin = (32.0, -110.0, 0.0)
    gset = lift_heights(hmap, rpc, origin=origin)
    vv, uu = np.meshgrid(np.arange(8.0), np.arange(8.0), indexing="ij")
    lat, lon, ok, _ = localize_grid(rpc, uu, vv, 12.0)
    e, n, up = geo.geodetic_to_flat(lat.ravel(), lon.ravel(),
                                    np.full(64, 12.0), origin)
    expect = np.stack([e, n, up], axis=1)
    assert ok.all()
    assert np.max(np.abs(gset.mu - expect)) < 1e-3


def test_lift_heights_image_colors(oracle_pair):
    _, rpc = oracle_pair
    hmap = RasterF32(np.full((4, 4), 10.0, np.float32))
    img = RasterF32(rng.uniform(size=(4, 4, 3)).astype(np.float32))
    gset = lift_heights(hmap, rpc, image=img)
    assert np.allclose(gset.sh.reshape(4, 4, 3), img.data, atol=1e-6)


def test_lift_heights_empty_raises(oracle_pair):
    _, rpc = oracle_pair
    hmap = RasterF32(np.zeros((4, 4), np.float32), np.zeros((4, 4), bool))
    with pytest.raises(EmptyHeightMap):
        lift_heights(hmap, rpc)


def test_estimate_gsd_close_to_scene_gsd(oracle_pair):
    _, rpc = oracle_pair
    g = estimate_gsd(rpc, 15.0, 128.0, 128.0)
    assert 0.2 < g < 0.4


def test_lifted_scene_rerender_psnr(flat_bundle):
    b = flat_bundle
    img = b.images[0]
    hmap = b.gt_height[0]
    h, w = img.height, img.width
    pin = fit_pinhole(b.rpcs[0], (0.0, 0.0, float(w - 1), float(h - 1)), (5.0, 15.0))
    gset = lift_heights(hmap, b.rpcs[0], origin=pin.enu_origin, image=img)
    rendered, rep = render(gset, pin, (h, w))
    assert rep.n_skipped_degenerate == 0
    assert psnr(rendered, img) >= 20.0


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_skgs_round_trip(tmp_path):
    n = 7
    mus = rng.normal(size=(n, 3))
    g = _gset(mus, rng.uniform(size=(n, 3)), rng.uniform(0.1, 0.9, n),
              scale=1.5)
    p = tmp_path / "scene.skgs"
    save_gaussians(g, p)
    g2 = load_gaussians(p)
    assert len(g2) == n
    assert np.allclose(g2.mu, g.mu, atol=1e-5)
    assert np.allclose(g2.scale, g.scale, atol=1e-5)
    assert np.allclose(g2.sh, g.sh, atol=1e-6)
    assert np.allclose(g2.alpha, g.alpha, atol=1e-6)


def test_skgs_bad_magic(tmp_path):
    p = tmp_path / "bad.skgs"
    p.write_bytes(b"NOPE__" + b"\x00" * 32)
    with pytest.raises(MagicMismatch):
        load_gaussians(p)


def test_skgs_truncated(tmp_path):
    p = tmp_path / "short.skgs"
    p.write_bytes(b"SKGS1\n" + (5).to_bytes(4, "little") + b"\x00" * 16)
    with pytest.raises(TruncatedFile):
        load_gaussians(p)


def test_gaussian_set_validation():
    with pytest.raises(ValueError):
        _gset([[0, 0, 0]], [[1, 1, 1]], [1.5])  # alpha > 1
    with pytest.raises(ValueError):
        GaussianSet(mu=[[0, 0, 0]], scale=[[1, 1, 1]], rot=[[2, 0, 0, 0]],
                    sh=[[1, 1, 1]], alpha=[0.5])  # non-unit quaternion
