"""Command-line entry point: ``swinoir {topology,eval,train,pipeline}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import list_images, load_pairs, read_image
from .errors import SwinOIRError
from .metrics import MetricConfig, psnr, ssim
from .model import init_model
from .pipeline import DEFAULT_CONFIDENCE, run_pipeline
from .topology import STRATEGIES, make_topology
from .training import config_to_dict, read_config, train


def cmd_topology(args) -> int:
    topo = make_topology(args.blocks, args.strategy)
    print(topo.to_text())
    if args.dot:
        Path(args.dot).write_text(topo.to_dot())
        print(f"wrote {args.dot}")
    return 0


def match_pairs(restored_dir, reference_dir) -> list[tuple[Path, Path]]:
    refs = {p.stem: p for p in list_images(reference_dir)}
    pairs, missing = [], []
    for p in list_images(restored_dir):
        ref = refs.get(p.stem)
        if ref is None:
            missing.append(p.name)
        else:
            pairs.append((p, ref))
    if missing:
        raise SwinOIRError(f"no ground truth for: {', '.join(missing)}")
    if not pairs:
        raise SwinOIRError(f"no image pairs found in {restored_dir} / {reference_dir}")
    return pairs


def evaluate_dirs(restored_dir, reference_dir, cfg: MetricConfig) -> list[dict]:
    rows = []
    for restored, reference in match_pairs(restored_dir, reference_dir):
        x = read_image(restored) * 255.0
        y = read_image(reference) * 255.0
        rows.append({"image": restored.stem, "psnr": psnr(x, y, cfg), "ssim": ssim(x, y, cfg)})
    return rows


def cmd_eval(args) -> int:
    shave = args.scale if args.shave is None else args.shave
    cfg = MetricConfig(
        max_value=255.0,
        channel_mode=args.channel_mode,
        border_shave=shave,
        window=args.window,
        window_size=args.window_size,
    )
    rows = evaluate_dirs(args.restored, args.reference, cfg)
    mean_psnr = float(np.mean([r["psnr"] for r in rows]))
    mean_ssim = float(np.mean([r["ssim"] for r in rows]))
    print(f"# {cfg.describe()}")
    print(f"{'image':<24} {'PSNR':>8} {'SSIM':>8}")
    for r in rows:
        print(f"{r['image']:<24} {r['psnr']:8.2f} {r['ssim']:8.4f}")
    print(f"{'mean':<24} {mean_psnr:8.2f} {mean_ssim:8.4f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image", "psnr", "ssim", "channel_mode", "border_shave"])
            for r in rows + [{"image": "mean", "psnr": mean_psnr, "ssim": mean_ssim}]:
                writer.writerow([r["image"], f"{r['psnr']:.4f}", f"{r['ssim']:.6f}", cfg.channel_mode, shave])
    return 0


def cmd_train(args) -> int:
    model_cfg, train_cfg = read_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config_to_dict(model_cfg, train_cfg), indent=2))
    pairs = load_pairs(args.data, model_cfg.upscale)
    val = load_pairs(args.val, model_cfg.upscale) if args.val else None
    model = init_model(model_cfg, seed=train_cfg.seed)
    report = train(model, pairs, train_cfg, validation=val, checkpoint_dir=out / "checkpoints")
    report.write_metrics_csv(out / "metrics.csv")
    report.write_series(out / "series.json")
    print(f"trained {len(report.epochs)} epochs in {report.seconds:.1f}s; final checkpoint {report.checkpoints[-1]}")
    return 0


def cmd_pipeline(args) -> int:
    report = run_pipeline(
        args.image, args.detections, args.checkpoint, args.out_dir, args.conf, args.margin, args.workers
    )
    for r in report.records:
        status = r.error or f"{r.crop_size[0]}x{r.crop_size[1]} -> {r.output_size[0]}x{r.output_size[1]}"
        print(f"[{r.index}] {r.label} ({r.confidence:.2f}){' clipped' if r.clipped else ''}: {status}")
    print(f"{len(report.records)} crop(s); report at {Path(args.out_dir) / 'report.json'}")
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swinoir", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("topology", help="print block source sets")
    p.add_argument("--blocks", "-m", type=int, default=4)
    p.add_argument("--strategy", choices=STRATEGIES, default="interval-dense")
    p.add_argument("--dot", help="also write a Graphviz DOT file")
    p.set_defaults(func=cmd_topology)

    p = sub.add_parser("eval", help="PSNR/SSIM of restored images against ground truth")
    p.add_argument("--restored", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--scale", type=int, default=0, help="upscale factor; default border shave")
    p.add_argument("--shave", type=int, help="override border shave")
    p.add_argument("--channel-mode", choices=("luminance", "rgb-mean"), default="luminance")
    p.add_argument("--window", choices=("uniform", "gaussian"), default="uniform")
    p.add_argument("--window-size", type=int, default=8)
    p.add_argument("--csv", help="write machine-readable rows here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="train a model on a directory of HR images")
    p.add_argument("--config", required=True, help="INI file with [model] and [train] sections")
    p.add_argument("--data", required=True)
    p.add_argument("--val", help="validation image directory (defaults to the training set)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("pipeline", help="super-resolve detected objects")
    p.add_argument("--image", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--conf", type=float, default=DEFAULT_CONFIDENCE)
    p.add_argument("--margin", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (SwinOIRError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
