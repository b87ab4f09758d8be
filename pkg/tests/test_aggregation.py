import numpy as np
import pytest

from skysplat import geo
from skysplat.aggregation import (
    DsmGrid,
    GeoPoint,
    ReliablePoint,
    all_points,
    consistency_filter,
    load_dsm,
    rasterize_dsm,
    reproject_check,
    save_dsm,
    save_points,
)
from skysplat.errors import EmptyPointSet, OutOfFootprint, ViewCountTooSmall
from skysplat.raster import RasterF32
from skysplat.rpc import PixelCoord

rng = np.random.default_rng(19)

_ORIGIN = (32.0, -110.0)


def _points_from_flat(e, n, h, n_agree=2):
    lat, lon, hei = geo.flat_to_geodetic(np.asarray(e, float), np.asarray(n, float),
                                         np.asarray(h, float),
                                         (_ORIGIN[0], _ORIGIN[1], 0.0))
    return [ReliablePoint(GeoPoint(float(a), float(b), float(c)), 0, n_agree)
            for a, b, c in zip(np.atleast_1d(lat), np.atleast_1d(lon), np.atleast_1d(hei))]


# ---------------------------------------------------------------------------
# reprojection check
# ---------------------------------------------------------------------------

def test_reproject_identity_pair_zero_deltas(flat_bundle):
    b = flat_bundle
    hm = RasterF32(np.full((64, 64), 10.0, np.float32))
    dp, dh = reproject_check(b.rpcs[0], b.rpcs[0], hm, hm, PixelCoord(30.0, 30.0))
    assert dp < 1e-6
    assert dh < 1e-9


def test_reproject_consistent_cross_view(flat_bundle):
    # flat terrain: perfect maps in two views agree to well below the gates
    b = flat_bundle
    hm = RasterF32(np.full((64, 64), 10.0, np.float32))
    dp, dh = reproject_check(b.rpcs[0], b.rpcs[1], hm, hm, PixelCoord(32.0, 32.0))
    assert dp < 0.1
    assert dh < 0.01


def test_reproject_corrupted_source_flagged(flat_bundle):
    b = flat_bundle
    hm = RasterF32(np.full((64, 64), 10.0, np.float32))
    bad = RasterF32(np.full((64, 64), 15.0, np.float32))
    dp, dh = reproject_check(b.rpcs[0], b.rpcs[1], hm, bad, PixelCoord(32.0, 32.0))
    assert dp > 3.0 or dh > 0.2


def test_reproject_scalar_two_step_oracle(flat_bundle):
    # recompute the two-step reprojection by hand with the camera primitives
    from skysplat.cost_volume import bilinear_sample
    from skysplat.rpc import localize_grid, project_grid

    b = flat_bundle
    h_ref = RasterF32(rng.uniform(8.0, 12.0, (64, 64)).astype(np.float32))
    h_src = RasterF32(rng.uniform(8.0, 12.0, (64, 64)).astype(np.float32))
    p = PixelCoord(20.0, 40.0)
    dp, dh = reproject_check(b.rpcs[0], b.rpcs[1], h_ref, h_src, p)

    hi = float(bilinear_sample(h_ref, p.u, p.v)[0][0])
    lat, lon, _, _ = localize_grid(b.rpcs[0], p.u, p.v, hi)
    qu, qv, _ = project_grid(b.rpcs[1], lat, lon, hi, check_cube=False)
    hj = float(bilinear_sample(h_src, qu, qv)[0][0])
    lat2, lon2, _, _ = localize_grid(b.rpcs[1], qu, qv, hj, init=(lat, lon))
    pu, pv, _ = project_grid(b.rpcs[0], lat2, lon2, hj, check_cube=False)
    hip = float(bilinear_sample(h_ref, pu, pv)[0][0])
    exp_dp = float(np.hypot(pu - p.u, pv - p.v))
    exp_dh = abs(hi - hip) / abs(hi)
    assert dp == pytest.approx(exp_dp, abs=1e-9)
    assert dh == pytest.approx(exp_dh, abs=1e-12)


def test_reproject_near_zero_height_absolute_rule(flat_bundle):
    b = flat_bundle
    h_ref = RasterF32(np.full((64, 64), 0.1, np.float32))
    h_src = RasterF32(np.full((64, 64), 0.1, np.float32))
    dp, dh = reproject_check(b.rpcs[0], b.rpcs[0], h_ref, h_src, PixelCoord(30.0, 30.0))
    # |h| < 0.5 switches to |dh|/0.5 which stays finite and tiny here
    assert dh < 1e-6


def test_reproject_out_of_footprint_raises(flat_bundle):
    b = flat_bundle
    hm = RasterF32(np.full((64, 64), 10.0, np.float32))
    valid = np.zeros((64, 64), bool)
    with pytest.raises(OutOfFootprint):
        reproject_check(b.rpcs[0], b.rpcs[1], RasterF32(hm.data, valid), hm,
                        PixelCoord(30.0, 30.0))


# ---------------------------------------------------------------------------
# consistency filter
# ---------------------------------------------------------------------------

def test_filter_matches_per_pixel_check(flat_bundle):
    b = flat_bundle
    maps = [RasterF32(rng.uniform(9.0, 11.0, (64, 64)).astype(np.float32))
            for _ in range(3)]
    _, masks = consistency_filter(maps, b.rpcs, return_masks=True)
    # brute-force the same rule with the scalar primitive on a subgrid
    for r in range(8, 56, 7):
        for c in range(8, 56, 7):
            agree = 0
            for j in (1, 2):
                try:
                    dp, dh = reproject_check(b.rpcs[0], b.rpcs[j], maps[0], maps[j],
                                             PixelCoord(float(c), float(r)))
                except OutOfFootprint:
                    continue
                if dp < 3.0 and dh < 0.2:
                    agree += 1
            assert masks[0][r, c] == (agree >= 1)


def test_filter_infinite_gates_retain_everything(flat_bundle):
    b = flat_bundle
    maps = [RasterF32(rng.uniform(9.0, 11.0, (64, 64)).astype(np.float32))
            for _ in range(3)]
    pts, masks = consistency_filter(maps, b.rpcs, dp_max=np.inf, dh_max=np.inf,
                                    return_masks=True)
    # all pixels whose two-step chain stays in-footprint survive
    assert masks[0].mean() > 0.8
    assert len(pts) == sum(m.sum() for m in masks)


def test_filter_retains_ground_truth_heights(flat_bundle):
    # all views carrying the true heights: nearly every interior pixel passes
    b = flat_bundle
    maps = [RasterF32(np.full((64, 64), 10.0, np.float32)) for _ in range(3)]
    _, masks = consistency_filter(maps, b.rpcs, return_masks=True)
    interior = np.zeros((64, 64), bool)
    interior[6:-6, 6:-6] = True
    for m in masks:
        assert (m & interior).sum() / interior.sum() >= 0.99


def test_filter_rejects_constant_offset_view(flat_bundle):
    b = flat_bundle
    maps = [RasterF32(np.full((64, 64), 10.0, np.float32)) for _ in range(3)]
    maps[2] = RasterF32(np.full((64, 64), 110.0, np.float32))
    _, masks = consistency_filter(maps, b.rpcs, return_masks=True)
    # the corrupted view's own points are rejected against both others
    assert masks[2].mean() < 0.01
    # the two clean views still validate each other (min_agree = 1)
    interior = np.zeros((64, 64), bool)
    interior[6:-6, 6:-6] = True
    assert (masks[0] & interior).sum() / interior.sum() > 0.95


def test_filter_monotonic_in_gates(flat_bundle):
    b = flat_bundle
    maps = [RasterF32(rng.uniform(5.0, 15.0, (64, 64)).astype(np.float32))
            for _ in range(3)]
    counts = [len(consistency_filter(maps, b.rpcs, dp_max=dp, dh_max=0.5))
              for dp in (0.1, 1.0, 3.0, 10.0)]
    assert counts == sorted(counts)


def test_filter_min_agree_monotonic(flat_bundle):
    b = flat_bundle
    maps = [RasterF32(np.full((64, 64), 10.0, np.float32)) for _ in range(3)]
    n1 = len(consistency_filter(maps, b.rpcs, min_agree=1))
    n2 = len(consistency_filter(maps, b.rpcs, min_agree=2))
    assert n2 <= n1
    assert n1 > 0


def test_filter_needs_two_views(flat_bundle):
    with pytest.raises(ViewCountTooSmall):
        consistency_filter([RasterF32(np.zeros((4, 4)))], flat_bundle.rpcs[:1])


def test_all_points_counts(flat_bundle):
    b = flat_bundle
    valid = rng.uniform(size=(64, 64)) > 0.5
    maps = [RasterF32(np.full((64, 64), 10.0, np.float32), valid)] * 3
    pts = all_points(maps, b.rpcs)
    assert len(pts) == 3 * int(valid.sum())


# ---------------------------------------------------------------------------
# DSM rasterization
# ---------------------------------------------------------------------------

def test_rasterize_single_point_lands_in_cell():
    grid = DsmGrid.empty(_ORIGIN, -5.0, 5.0, 11, 11, 1.0)
    pts = _points_from_flat([2.0], [3.0], [12.5])
    dsm = rasterize_dsm(pts, grid)
    # cell (r, c) centered at (x0 + c, y0 - r): (2, 3) -> c = 7, r = 2
    assert dsm.heights[2, 7] == pytest.approx(12.5, abs=1e-6)
    assert dsm.data_mask().sum() == 1


def test_rasterize_max_wins_in_shared_cell():
    grid = DsmGrid.empty(_ORIGIN, -5.0, 5.0, 11, 11, 1.0)
    pts = _points_from_flat([0.0, 0.1, -0.2], [0.0, 0.1, -0.1], [3.0, 9.0, 6.0])
    dsm = rasterize_dsm(pts, grid)
    assert dsm.heights[5, 5] == pytest.approx(9.0, abs=1e-6)


def test_rasterize_median_mode():
    grid = DsmGrid.empty(_ORIGIN, -5.0, 5.0, 11, 11, 1.0)
    pts = _points_from_flat([0.0, 0.1, -0.2], [0.0, 0.1, -0.1], [3.0, 9.0, 6.0])
    dsm = rasterize_dsm(pts, grid, mode="median")
    assert dsm.heights[5, 5] == pytest.approx(6.0, abs=1e-6)


def test_rasterize_bucket_oracle_1000_points():
    grid = DsmGrid.empty(_ORIGIN, -10.0, 10.0, 21, 21, 1.0)
    e = rng.uniform(-12, 12, 1000)
    n = rng.uniform(-12, 12, 1000)
    h = rng.uniform(0, 30, 1000)
    dsm = rasterize_dsm(_points_from_flat(e, n, h), grid)
    # independent bucketing
    expect = np.full((21, 21), -9999.0)
    c = np.round((e - grid.x0) / grid.cell_size).astype(int)
    r = np.round((grid.y0 - n) / grid.cell_size).astype(int)
    for ri, ci, hi in zip(r, c, h):
        if 0 <= ri < 21 and 0 <= ci < 21:
            expect[ri, ci] = max(expect[ri, ci], hi)
    assert np.allclose(dsm.heights, expect, atol=1e-4)


def test_rasterize_all_outside_raises():
    grid = DsmGrid.empty(_ORIGIN, 1000.0, 1000.0, 4, 4, 1.0)
    with pytest.raises(EmptyPointSet):
        rasterize_dsm(_points_from_flat([0.0], [0.0], [1.0]), grid)


def test_rasterize_empty_raises():
    grid = DsmGrid.empty(_ORIGIN, 0.0, 0.0, 4, 4, 1.0)
    with pytest.raises(EmptyPointSet):
        rasterize_dsm([], grid)


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------

def test_save_load_dsm_round_trip(tmp_path):
    grid = DsmGrid.empty(_ORIGIN, -3.0, 3.0, 7, 7, 1.0)
    grid.heights[2, 3] = 14.5
    grid.heights[6, 0] = -2.0
    p = tmp_path / "dsm.skyr"
    save_dsm(grid, p)
    back = load_dsm(p)
    assert back.origin == grid.origin
    assert back.cell_size == grid.cell_size
    assert np.allclose(back.heights, grid.heights, atol=1e-5)
    assert np.array_equal(back.data_mask(), grid.data_mask())


def test_save_points_format(tmp_path):
    pts = [ReliablePoint(GeoPoint(32.5, -110.25, 12.75), 1, 2)]
    p = tmp_path / "points.txt"
    save_points(pts, p)
    lat, lon, hei, n_agree = p.read_text().split()
    assert float(lat) == 32.5 and float(lon) == -110.25
    assert float(hei) == 12.75 and int(n_agree) == 2
