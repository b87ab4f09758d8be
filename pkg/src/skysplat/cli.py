"""skysplat command-line interface.

Subcommands: reconstruct, synth, eval, render, rpc (fit-pinhole), mask.
Exit codes: 0 ok, 2 configuration error, 3 pipeline error.  Logs go to
standard error as line-delimited "level stage message".
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__
from .errors import ConfigError, SkySplatError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PIPELINE = 3


class _StageFormatter(logging.Formatter):
    def format(self, record):
        stage = record.name.rsplit(".", 1)[-1]
        return f"{record.levelname.lower()} {stage} {record.getMessage()}"


def _setup_logging(verbose: bool):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_StageFormatter())
    root = logging.getLogger("skysplat")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def _load_config(args) -> "PipelineConfig":
    from .pipeline import PipelineConfig

    with open(args.config) as f:
        data = json.load(f)
    overrides = {
        "num_hypotheses": args.num_hypotheses,
        "feature_kind": args.feature_kind,
        "tau": args.tau,
        "temperature": args.temperature,
        "regularize_radius": args.regularize_radius,
        "dp_max": args.dp_max,
        "dh_max": args.dh_max,
        "min_agree": args.min_agree,
        "output_dir": args.output_dir,
        "threads": args.threads,
    }
    for k, v in overrides.items():
        if v is not None:
            data[k] = v
    if args.height_range is not None:
        data["height_range"] = args.height_range
    if args.no_cscm:
        data["cscm_enabled"] = False
    if args.no_aggregation:
        data["aggregation_enabled"] = False
    return PipelineConfig.from_dict(data)


def _cmd_reconstruct(args) -> int:
    from .pipeline import run_reconstruct

    config = _load_config(args)
    summary = run_reconstruct(config)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _cmd_synth(args) -> int:
    from . import synthetic

    relief = json.loads(args.relief_json) if args.relief_json else {
        "kind": args.relief, "count": 6, "h_min": 8.0, "h_max": 25.0,
    }
    if relief.get("kind") == "flat" and "height" not in relief:
        relief["height"] = 10.0
    transients = []
    npx = int(round(args.extent / args.gsd))
    for tv in args.transient or ():
        r0 = npx // 2 - npx // 8
        transients.append((int(tv), (r0, r0, r0 + npx // 4, r0 + npx // 4),
                           (0.9, 0.1, 0.1)))
    spec = synthetic.SceneSpec(seed=args.seed, extent=args.extent, gsd=args.gsd,
                               relief=relief, n_views=args.views,
                               transients=tuple(transients))
    bundle = synthetic.generate(spec)
    synthetic.save_bundle(bundle, args.out)
    print(json.dumps({"out": args.out, "n_views": spec.n_views,
                      "height_range": list(bundle.height_range)}, indent=2))
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .aggregation import load_dsm
    from .metrics import dsm_metrics
    from .raster import load_raster

    pred = load_dsm(args.pred)
    gt = load_dsm(args.gt)
    exclude = None
    if args.exclude:
        exclude = load_raster(args.exclude).plane(0) > 0.5
    report = dsm_metrics(pred, gt, thresholds=tuple(args.thresholds),
                         exclude=exclude,
                         remove_median_bias=args.remove_median_bias)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def _cmd_render(args) -> int:
    from .gaussians import OrthoCamera, load_gaussians, render
    from .raster import save_raster

    gset = load_gaussians(args.gaussians)
    cam = OrthoCamera(x0=args.x0, y0=args.y0, gsd=args.gsd)
    img, report = render(gset, cam, (args.rows, args.cols),
                         background=tuple(args.background))
    save_raster(img, args.out)
    print(json.dumps({"out": args.out,
                      "n_skipped_degenerate": report.n_skipped_degenerate}))
    return EXIT_OK


def _cmd_rpc_fit_pinhole(args) -> int:
    from .rpc import fit_pinhole, load_rpc

    rpc = load_rpc(args.rpc)
    u0, v0, u1, v1 = args.patch
    fit = fit_pinhole(rpc, (u0, v0, u1, v1), tuple(args.hrange))
    print(json.dumps({"mfe_px": fit.mfe, "p": fit.p.tolist(),
                      "enu_origin": list(fit.enu_origin)}, indent=2))
    return EXIT_OK


def _cmd_mask(args) -> int:
    from . import cscm, features
    from .pipeline import mask_view, sweep_view
    from .cost_volume import sample_heights
    from .raster import load_raster, save_raster
    from .rpc import load_rpc

    config = _load_config(args)
    images = [load_raster(v.image) for v in config.views]
    rpcs = [load_rpc(v.rpc) for v in config.views]
    feats = [features.extract_builtin(img, config.feature_kind) for img in images]
    hyp = sample_heights(config.height_range[0], config.height_range[1],
                         config.num_hypotheses)
    height_maps = [sweep_view(i, rpcs, feats, hyp, config.temperature,
                              config.regularize_radius)
                   for i in range(len(config.views))]
    os.makedirs(config.output_dir, exist_ok=True)
    for i in range(len(config.views)):
        stable, fused, _ = mask_view(i, rpcs, images, feats, height_maps,
                                     config.tau,
                                     conf_feature_kind=config.conf_feature_kind,
                                     conf_smooth_radius=config.conf_smooth_radius)
        save_raster(cscm.mask_to_raster(stable),
                    os.path.join(config.output_dir, f"stable_{i}.skyr"))
        save_raster(fused, os.path.join(config.output_dir, f"confidence_{i}.skyr"))
    print(json.dumps({"out": config.output_dir, "n_views": len(config.views)}))
    return EXIT_OK


def _add_config_flags(p):
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--num-hypotheses", type=int, default=None)
    p.add_argument("--feature-kind", default=None, choices=("rgb", "grad_census"))
    p.add_argument("--height-range", type=float, nargs=2, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--regularize-radius", type=int, default=None)
    p.add_argument("--dp-max", type=float, default=None)
    p.add_argument("--dh-max", type=float, default=None)
    p.add_argument("--min-agree", type=int, default=None)
    p.add_argument("--output-dir", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--no-cscm", action="store_true")
    p.add_argument("--no-aggregation", action="store_true",
                   help="skip the consistency filter (summary labeled 'w/o C.A.')")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skysplat",
                                     description="Satellite multi-view height "
                                                 "reconstruction toolkit")
    parser.add_argument("--version", action="version",
                        version=f"skysplat {__version__}")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reconstruct", help="run the full pipeline from a config")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("synth", help="generate a synthetic oracle bundle")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--extent", type=float, default=76.8)
    p.add_argument("--gsd", type=float, default=0.3)
    p.add_argument("--views", type=int, default=3)
    p.add_argument("--relief", default="buildings",
                   choices=("flat", "ramp", "buildings", "fractal"))
    p.add_argument("--relief-json", default=None,
                   help="full relief dict as JSON (overrides --relief)")
    p.add_argument("--transient", action="append", default=None, metavar="VIEW",
                   help="paint a transient blob into this view (repeatable)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("eval", help="compare two DSMs")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--exclude", default=None, help="exclusion raster (>0.5 drops)")
    p.add_argument("--thresholds", type=float, nargs="+", default=[2.5, 7.5])
    p.add_argument("--remove-median-bias", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("render", help="render a Gaussian set orthographically")
    p.add_argument("--gaussians", required=True)
    p.add_argument("--x0", type=float, required=True)
    p.add_argument("--y0", type=float, required=True)
    p.add_argument("--gsd", type=float, required=True)
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--background", type=float, nargs=3, default=[0.0, 0.0, 0.0])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("rpc", help="RPC camera utilities")
    rpc_sub = p.add_subparsers(dest="rpc_command", required=True)
    pp = rpc_sub.add_parser("fit-pinhole", help="fit a pinhole approximation")
    pp.add_argument("--rpc", required=True)
    pp.add_argument("--patch", type=float, nargs=4, required=True,
                    metavar=("U0", "V0", "U1", "V1"))
    pp.add_argument("--hrange", type=float, nargs=2, required=True)
    pp.set_defaults(func=_cmd_rpc_fit_pinhole)

    p = sub.add_parser("mask", help="standalone transient masking")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_mask)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    log = logging.getLogger("skysplat.cli")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as e:
        log.error("%s", e)
        return EXIT_CONFIG
    except SkySplatError as e:
        log.error("%s: %s", type(e).__name__, e)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
