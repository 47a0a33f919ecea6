"""Command-line entry point: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import PipelineConfig, default_config_text, parse_config
from .pipeline import Pipeline, PipelineError
from .retrieval import SOURCES


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="objdisco",
        description="Unsupervised object discovery and instance retrieval over activation tensors.",
    )
    parser.add_argument("--config", help="pipeline config file (section.key = value lines)")
    parser.add_argument("--work-dir", help="override paths.work_dir")
    parser.add_argument("--jobs", type=int, default=1, help="worker threads for per-image stages")
    parser.add_argument("--dump-config", action="store_true", help="print the default config and exit")
    sub = parser.add_subparsers(dest="stage")

    p = sub.add_parser("fs", help="compute feature-saliency maps")
    p.add_argument("--tau", type=float, help="mask threshold")
    p.add_argument("--rho", type=float, help="sharpening exponent")
    p.add_argument("--heatmap-dir", help="also write PGM heatmaps here")

    p = sub.add_parser("detect", help="detect regions on stored saliency maps")
    p.add_argument("--source", choices=("fs", "os"), default="fs")
    p.add_argument("--sigma", type=float, help="sample scale")
    p.add_argument("--kappa", type=float, help="purge overlap threshold")
    p.add_argument("--lambda", dest="extent", type=float, help="rectangle half-width in standard deviations")

    p = sub.add_parser("pool", help="pool region descriptors and fit whitening")
    p.add_argument("--dim", type=int, help="whitened dimension (0 keeps channels)")
    p.add_argument("--shrinkage", type=float, help="covariance shrinkage")

    p = sub.add_parser("graph", help="build the region graph and solve centrality")
    p.add_argument("--k", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--tol", type=float)

    p = sub.add_parser("os", help="compute object-saliency maps")
    p.add_argument("--theta-img", type=float)
    p.add_argument("--theta-nbr", type=float)
    p.add_argument("--k-os", type=int)
    p.add_argument("--patch", type=int)

    p = sub.add_parser("aggregate", help="aggregate global descriptors")
    p.add_argument("--source", choices=SOURCES + ("all",), default="all")

    p = sub.add_parser("search", help="rank the database for each query")
    p.add_argument("--source", choices=SOURCES, default="os")
    p.add_argument("--diffusion", dest="diffusion", action="store_true", default=None)
    p.add_argument("--no-diffusion", dest="diffusion", action="store_false")

    p = sub.add_parser("eval", help="score rankings against ground truth")
    p.add_argument("--source", choices=SOURCES, default="os")

    p = sub.add_parser("sal-precision", help="measure saliency precision against ground-truth boxes")
    p.add_argument("--plot-dir", help="write PGM heatmaps and a histogram chart here")

    sub.add_parser("all", help="run the whole pipeline")
    return parser


def _apply_overrides(config: PipelineConfig, args: argparse.Namespace) -> None:
    if args.work_dir:
        config.paths.work_dir = args.work_dir
    stage = args.stage
    if stage == "fs":
        if args.tau is not None:
            config.fs.tau = args.tau
        if args.rho is not None:
            config.fs.rho = args.rho
    elif stage == "detect":
        if args.sigma is not None:
            if args.source == "fs":
                config.fs.sigma = args.sigma
            else:
                config.os.sigma = args.sigma
        if args.kappa is not None:
            config.egm.kappa = args.kappa
        if args.extent is not None:
            config.egm.extent = args.extent
    elif stage == "pool":
        if args.dim is not None:
            config.whitening.dim = args.dim
        if args.shrinkage is not None:
            config.whitening.shrinkage = args.shrinkage
    elif stage == "graph":
        for key in ("k", "beta", "alpha", "tol"):
            value = getattr(args, key)
            if value is not None:
                setattr(config.graph, key, value)
    elif stage == "os":
        if args.theta_img is not None:
            config.os.theta_img = args.theta_img
        if args.theta_nbr is not None:
            config.os.theta_nbr = args.theta_nbr
        if args.k_os is not None:
            config.os.k = args.k_os
        if args.patch is not None:
            config.os.patch = args.patch


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.dump_config:
        sys.stdout.write(default_config_text())
        return 0
    if not args.stage:
        parser.print_help()
        return 2
    if args.config:
        config = parse_config(Path(args.config).read_text(encoding="utf-8"))
    else:
        config = PipelineConfig()
    _apply_overrides(config, args)
    pipeline = Pipeline(config=config, jobs=max(1, args.jobs))
    kwargs = {}
    if args.stage == "fs":
        kwargs["heatmap_dir"] = args.heatmap_dir
    elif args.stage in ("detect", "eval"):
        kwargs["source"] = args.source
    elif args.stage == "search":
        kwargs["source"] = args.source
        kwargs["diffusion"] = args.diffusion
    elif args.stage == "sal-precision":
        kwargs["plot_dir"] = args.plot_dir
    try:
        if args.stage == "aggregate":
            sources = SOURCES if args.source == "all" else (args.source,)
            for source in sources:
                pipeline.run([f"aggregate:{source}"])
        else:
            pipeline.run([args.stage], **kwargs)
    except (PipelineError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
