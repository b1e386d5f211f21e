"""Command line entry point: ``bpdip restore`` and ``bpdip experiment``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .imaging import DegradationSpec, degrade, parse_kernel, read_png, sigma_from_text, write_png
from .losses import DEFAULT_EPS1, DEFAULT_EPS2, LossSpec
from .prior_net import NetConfig, build_network, save_checkpoint
from .runner import RunConfig, run_restoration

log = logging.getLogger("bpdip")


def _restore_parser(sub):
    p = sub.add_parser("restore", help="deblur a single image")
    p.add_argument("--input", required=True, help="observed (blurred, noisy) image; clean image with --synthesize")
    p.add_argument("--kernel", default="uniform",
                   help="uniform, gaussian[:std], radial, delta or file:<path> (default: uniform)")
    p.add_argument("--sigma255", default="0", help="noise std on the 8-bit scale, e.g. 1.41 or sqrt(2)")
    p.add_argument("--loss", choices=["LS", "BP", "ls", "bp"], default="BP")
    p.add_argument("--tv-weight", type=float, default=0.0)
    p.add_argument("--eps1", type=float, default=DEFAULT_EPS1)
    p.add_argument("--eps2", type=float, default=DEFAULT_EPS2)
    p.add_argument("--iterations", type=int, default=RunConfig.iterations)
    p.add_argument("--lr", type=float, default=RunConfig.lr)
    p.add_argument("--seed", type=int, default=0, help="seeds the network, its input and synthetic noise")
    p.add_argument("--ground-truth", help="clean reference image for PSNR/SSIM and peak selection")
    p.add_argument("--out-dir", default="restore_out")
    p.add_argument("--trace-csv", help="trace path (default: <out-dir>/trace.csv)")
    p.add_argument("--stride", type=int, default=RunConfig.stride)
    p.add_argument("--stopping", choices=["fixed_budget", "oracle_peak"],
                   help="default: oracle_peak with a ground truth, fixed_budget otherwise")
    p.add_argument("--synthesize", action="store_true",
                   help="treat --input as the clean image, degrade it and use it as ground truth")
    p.add_argument("--max-size", type=int, help="center-crop inputs to at most this side length")
    p.add_argument("--net-features", type=int, default=NetConfig.features)
    p.add_argument("--net-depth", type=int, default=NetConfig.depth)
    p.add_argument("--checkpoint", help="save the selected network parameters here")
    p.add_argument("--no-ssim", action="store_true", help="skip SSIM in the trace")
    p.set_defaults(func=cmd_restore)


def cmd_restore(args) -> int:
    kernel = parse_kernel(args.kernel)
    sigma = sigma_from_text(args.sigma255)
    image = read_png(args.input, args.max_size)
    truth = None
    if args.synthesize:
        truth = image
        image = degrade(truth, DegradationSpec(kernel, sigma, args.seed))
    elif args.ground_truth:
        truth = read_png(args.ground_truth, args.max_size)

    stopping = args.stopping or ("oracle_peak" if truth is not None else "fixed_budget")
    loss = LossSpec(fidelity=args.loss.upper(), eps1=args.eps1, eps2=args.eps2,
                    sigma255=sigma, tv_weight=args.tv_weight)
    net_cfg = NetConfig(features=args.net_features, depth=args.net_depth, output_channels=image.shape[2])
    run_cfg = RunConfig(iterations=args.iterations, lr=args.lr, stride=args.stride, stopping=stopping,
                        seed=args.seed, record_ssim=not args.no_ssim)

    def progress(row):
        if row.psnr is not None:
            log.info("iter %6d  loss %.6g  psnr %.2f", row.iteration, row.loss, row.psnr)
        else:
            log.info("iter %6d  loss %.6g", row.iteration, row.loss)

    result = run_restoration(image, kernel, loss, net_cfg, run_cfg, ground_truth=truth, progress=progress)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_png(out_dir / "restored.png", result.image)
    trace_path = Path(args.trace_csv) if args.trace_csv else out_dir / "trace.csv"
    trace_path.parent.mkdir(parents=True, exist_ok=True)
    result.trace.write_csv(trace_path)
    if args.synthesize:
        write_png(out_dir / "observed.png", image)
    if args.checkpoint:
        net = build_network(net_cfg, image.shape[:2], seed=args.seed)
        net.load_state_dict(result.state_dict)
        save_checkpoint(net, args.checkpoint, iteration=result.selected_iteration)

    msg = f"selected iteration {result.selected_iteration}"
    if result.trace.best_psnr is not None:
        msg += f", peak PSNR {result.trace.best_psnr:.2f} dB at iteration {result.trace.best_iteration}"
    print(msg)
    return 0


def _experiment_parser(sub):
    p = sub.add_parser("experiment", help="run a kernel x noise x method grid from a YAML config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_experiment)


def cmd_experiment(args) -> int:
    from .harness import ExperimentConfig, run_experiment

    cfg = ExperimentConfig.load(args.config)
    table = run_experiment(cfg)
    failed = sum(r.status != "ok" for r in table.rows)
    print(f"{len(table.rows)} runs, {failed} failed; summary in {Path(cfg.output_dir) / 'summary.csv'}")
    return 1 if failed else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bpdip", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _restore_parser(sub)
    _experiment_parser(sub)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
