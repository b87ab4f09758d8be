"""End-to-end reconstruction orchestration: features, height sweep, transient
masking, Gaussian lifting/rendering, consistency aggregation, DSM, reports."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import aggregation, cost_volume, cscm, features, gaussians, losses, metrics
from .aggregation import DsmGrid
from .errors import ConfigError
from .raster import RasterF32, load_raster, save_raster
from .rpc import fit_pinhole, load_rpc

logger = logging.getLogger(__name__)


@dataclass
class ViewInput:
    image: str
    rpc: str
    rel_height: str | None = None


@dataclass
class PipelineConfig:
    """Reconstruction settings; defaults follow the reference configuration
    (64 height hypotheses, tau 0.2, reprojection gates 3 px / 0.2)."""

    views: list = field(default_factory=list)
    height_range: tuple = (0.0, 30.0)
    num_hypotheses: int = 64
    feature_kind: str = "grad_census"
    feature_paths: list | None = None
    cscm_enabled: bool = True
    tau: float = cscm.TAU_DEFAULT
    conf_feature_kind: str = "rgb"
    conf_smooth_radius: int = 1
    temperature: float = 0.01
    regularize_radius: int = 4
    aggregation_enabled: bool = True
    dp_max: float = aggregation.DP_MAX_DEFAULT
    dh_max: float = aggregation.DH_MAX_DEFAULT
    min_agree: int = aggregation.MIN_AGREE_DEFAULT
    dsm: dict | None = None      # origin_lat, origin_lon, x0, y0, rows, cols, cell_size
    gt_dsm: str | None = None
    output_dir: str = "out"
    deterministic: bool = True
    threads: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        cfg = cls()
        known = set(cfg.__dataclass_fields__)
        for k, v in d.items():
            if k not in known:
                raise ConfigError(f"unknown config field {k!r}")
            setattr(cfg, k, v)
        cfg.views = [ViewInput(**v) if isinstance(v, dict) else v for v in cfg.views]
        cfg.height_range = tuple(float(x) for x in cfg.height_range)
        cfg.validate()
        return cfg

    def validate(self):
        if len(self.views) < 2:
            raise ConfigError(f"views: need at least 2 views, got {len(self.views)}")
        for v in self.views:
            for label, path in (("image", v.image), ("rpc", v.rpc),
                                ("rel_height", v.rel_height)):
                if path is not None and not os.path.exists(path):
                    raise ConfigError(f"{label} file not found: {path}")
        if self.gt_dsm is not None and not os.path.exists(self.gt_dsm):
            raise ConfigError(f"gt_dsm file not found: {self.gt_dsm}")
        if not self.height_range[0] < self.height_range[1]:
            raise ConfigError(f"height_range must be increasing, got {self.height_range}")
        if self.num_hypotheses < 2:
            raise ConfigError("num_hypotheses must be >= 2")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must be in [0, 1], got {self.tau}")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.dsm is not None:
            need = {"origin_lat", "origin_lon", "x0", "y0", "rows", "cols", "cell_size"}
            missing = need - set(self.dsm)
            if missing:
                raise ConfigError(f"dsm grid spec missing fields: {sorted(missing)}")


class _Timer:
    def __init__(self):
        self.stages = {}

    def stage(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()
                logger.info("%s start", name)
                return self

            def __exit__(self, *exc):
                timer.stages[name] = timer.stages.get(name, 0.0) + time.perf_counter() - self.t0
                logger.info("%s done in %.3fs", name, time.perf_counter() - self.t0)
                return False

        return _Ctx()


def sweep_view(ref_idx: int, rpcs, feats, hyp, temperature: float,
               regularize_radius: int) -> RasterF32:
    """Plane-sweep height estimation for one reference view."""
    ref_feat = feats[ref_idx]
    dims = (ref_feat.height, ref_feat.width)
    warped = []
    for j, (src_rpc, src_feat) in enumerate(zip(rpcs, feats)):
        if j == ref_idx:
            continue
        per_src = []
        prev = prev2 = None
        for h in hyp.values:
            if prev is not None and prev2 is not None:
                # localizations are near-linear in height: extrapolating the
                # last two solutions makes Newton converge almost immediately
                init = (2.0 * prev[0] - prev2[0], 2.0 * prev[1] - prev2[1])
            elif prev is not None:
                init = prev
            else:
                init = None
            w, latlon = cost_volume.warp_to_ref(rpcs[ref_idx], src_rpc, src_feat,
                                                float(h), dims, init=init,
                                                return_latlon=True)
            prev2 = prev
            prev = latlon
            per_src.append(w)
        warped.append(per_src)
    cv = cost_volume.build_variance_cost(ref_feat, warped, hyp)
    cv = cost_volume.regularize(cv, regularize_radius)
    return cost_volume.soft_argmin(cv, temperature)


def _smooth_confidence(q: RasterF32, radius: int) -> RasterF32:
    """Validity-weighted box smoothing; isolated low-confidence speckle from
    interpolation noise should not survive thresholding."""
    if radius <= 0:
        return q
    from scipy import ndimage

    size = 2 * radius + 1
    m = q.valid_mask().astype(np.float64)
    num = ndimage.uniform_filter(q.plane(0).astype(np.float64) * m, size=size,
                                 mode="constant", cval=0.0)
    den = ndimage.uniform_filter(m, size=size, mode="constant", cval=0.0)
    sm = np.where(den > 0, num / np.maximum(den, 1e-300), 0.0)
    return RasterF32(sm.astype(np.float32)[:, :, None], q.valid)


def mask_view(ref_idx: int, rpcs, images, feats, height_maps, tau: float,
              conf_feature_kind: str = "rgb", consistency_masks=None,
              conf_smooth_radius: int = 1):
    """CSCM transient masking for one reference view.

    Returns (stable_mask, fused_confidence, rendered_reference).  Cross-view
    confidence comes from feature similarity against sources warped at the
    estimated heights (restricted to geometrically consistent pixels when
    ``consistency_masks`` is given); holes are filled by calibrated self-view
    confidence against a splat re-rendering of the reference.  Confidence
    uses its own (smoother) feature kind, decoupled from matching features.
    """
    h_map = height_maps[ref_idx]
    cfeats = [features.extract_builtin(img, conf_feature_kind) for img in images]
    cv_maps = []
    for j in range(len(rpcs)):
        if j == ref_idx:
            continue
        warped = cost_volume.warp_at_heightmap(rpcs[ref_idx], rpcs[j], cfeats[j], h_map)
        cv_maps.append(cscm.cross_view_confidence(cfeats[ref_idx], warped))
    q_cv = cscm.mean_confidence(cv_maps)
    if consistency_masks is not None:
        q_cv = RasterF32(q_cv.data, q_cv.valid_mask() & consistency_masks[ref_idx])

    h, w = h_map.height, h_map.width
    pin = fit_pinhole(rpcs[ref_idx], (0.0, 0.0, float(w - 1), float(h - 1)),
                      (float(np.min(h_map.plane(0))) - 1.0,
                       float(np.max(h_map.plane(0))) + 1.0))
    gset = gaussians.lift_heights(h_map, rpcs[ref_idx], origin=pin.enu_origin,
                                  image=images[ref_idx])
    rendered, _ = gaussians.render(gset, pin, (h, w))
    feat_r = features.extract_builtin(rendered, conf_feature_kind)
    q_sv = cscm.self_view_confidence(cfeats[ref_idx], feat_r)
    fused = cscm.calibrate_and_fuse(q_cv, q_sv)
    fused = _smooth_confidence(fused, conf_smooth_radius)
    stable = cscm.binarize(fused, tau)
    return stable, fused, rendered


def run_reconstruct(config: PipelineConfig) -> dict:
    """Run the full reconstruction and write artifacts to config.output_dir.

    Returns the summary dictionary that is also written as summary.json.
    """
    config.validate()
    out = config.output_dir
    os.makedirs(out, exist_ok=True)
    timer = _Timer()
    n = len(config.views)

    with timer.stage("load"):
        images = [load_raster(v.image) for v in config.views]
        rpcs = [load_rpc(v.rpc) for v in config.views]
        rel_heights = [load_raster(v.rel_height) if v.rel_height else None
                       for v in config.views]

    with timer.stage("features"):
        if config.feature_paths:
            if len(config.feature_paths) != n:
                raise ConfigError("feature_paths must list one raster per view")
            feats = [load_raster(p) for p in config.feature_paths]
        else:
            feats = [features.extract_builtin(img, config.feature_kind) for img in images]

    hyp = cost_volume.sample_heights(config.height_range[0], config.height_range[1],
                                     config.num_hypotheses)
    height_maps = []
    with timer.stage("sweep"):
        for i in range(n):
            hm = sweep_view(i, rpcs, feats, hyp, config.temperature,
                            config.regularize_radius)
            height_maps.append(hm)
            save_raster(hm, os.path.join(out, f"heights_{i}.skyr"))

    cons_masks = None
    points = None
    if config.aggregation_enabled:
        with timer.stage("aggregate"):
            points, cons_masks = aggregation.consistency_filter(
                height_maps, rpcs, dp_max=config.dp_max, dh_max=config.dh_max,
                min_agree=config.min_agree, return_masks=True)
    else:
        with timer.stage("aggregate"):
            points = aggregation.all_points(height_maps, rpcs)

    stable_masks = [None] * n
    view_reports = []
    with timer.stage("cscm"):
        for i in range(n):
            report = {"view": i}
            if config.cscm_enabled:
                stable, fused, rendered = mask_view(
                    i, rpcs, images, feats, height_maps, config.tau,
                    conf_feature_kind=config.conf_feature_kind,
                    consistency_masks=cons_masks,
                    conf_smooth_radius=config.conf_smooth_radius)
                stable_masks[i] = stable
                save_raster(cscm.mask_to_raster(stable), os.path.join(out, f"stable_{i}.skyr"))
                save_raster(fused, os.path.join(out, f"confidence_{i}.skyr"))
                save_raster(rendered, os.path.join(out, f"render_{i}.skyr"))
                report["transient_fraction"] = float((~stable).mean())
                if rel_heights[i] is not None:
                    lr = losses.loss_report(rel_heights[i], height_maps[i], rendered,
                                            images[i], stable)
                    report["losses"] = lr.to_dict()
            elif rel_heights[i] is not None:
                r, l_hei = losses.pearson_height_loss(rel_heights[i], height_maps[i])
                report["losses"] = {"hei_corr": r, "l_hei": l_hei}
            view_reports.append(report)

    with timer.stage("dsm"):
        aggregation.save_points(points, os.path.join(out, "points.txt"))
        grid_spec = config.dsm
        if grid_spec is None:
            raise ConfigError("dsm grid spec is required to rasterize a DSM")
        grid = DsmGrid.empty((grid_spec["origin_lat"], grid_spec["origin_lon"]),
                             grid_spec["x0"], grid_spec["y0"],
                             int(grid_spec["rows"]), int(grid_spec["cols"]),
                             grid_spec["cell_size"])
        dsm = aggregation.rasterize_dsm(points, grid)
        aggregation.save_dsm(dsm, os.path.join(out, "dsm.skyr"))

    dsm_report = None
    if config.gt_dsm:
        with timer.stage("metrics"):
            gt = aggregation.load_dsm(config.gt_dsm)
            dsm_report = metrics.dsm_metrics(dsm, gt)

    summary = {
        "method": "SkySplat" if config.aggregation_enabled else "SkySplat w/o C.A.",
        "n_views": n,
        "hypothesis_spacing": hyp.spacing,
        "n_points": len(points),
        "timings_s": {k: round(v, 4) for k, v in timer.stages.items()},
        "views": view_reports,
    }
    if dsm_report is not None:
        summary["dsm_report"] = dsm_report.to_dict()
    with open(os.path.join(out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2)
    return summary
