"""Command-line interface: gen-data, train, complete, eval, metrics.

Exit codes: 0 success, 1 usage/config/input error, 2 runtime or numerical
failure. Every command validates its configuration before touching the
filesystem.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from viewfill.checkpoint import load_checkpoint, model_from_checkpoint
from viewfill.config import PipelineConfig, load_config, save_config
from viewfill.data import generate_dataset, load_image, load_split
from viewfill.errors import (
    CheckpointError,
    ConfigError,
    InvalidInputError,
    NumericalError,
    ViewfillError,
)
from viewfill.evaluate import (
    evaluate_samples,
    evaluate_self,
    plot_category_cd,
    plot_stage_cd,
    render_table,
    stage_chamfers,
    summarize,
    write_report,
)
from viewfill.geometry import read_xyz, write_xyz
from viewfill.metrics import fscore
from viewfill.model import AblationVariant, complete_single, validate_image_array
from viewfill.train import train

USAGE_EXIT = 1
RUNTIME_EXIT = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _resolve_config(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(
            config, train=dataclasses.replace(config.train, seed=args.seed)
        )
    return config


def prepare_image(pixels: np.ndarray, size: int) -> np.ndarray:
    """Center-crop to a square and resize to the configured resolution."""
    arr = validate_image_array(pixels)
    h, w = arr.shape[:2]
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    arr = arr[top : top + side, left : left + side]
    if side != size:
        from PIL import Image

        quantized = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
        resized = Image.fromarray(quantized, "RGB").resize(
            (size, size), Image.BILINEAR
        )
        arr = np.asarray(resized, dtype=np.float64) / 255.0
    return arr


def cmd_gen_data(args) -> int:
    config = _resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(out / "config.yaml", config)
    manifest = generate_dataset(config.data, out, config.train.seed)
    print(f"wrote {len(manifest)} samples under {out}")
    return 0


def cmd_train(args) -> int:
    config = _resolve_config(args)
    variant = AblationVariant.from_string(args.variant)
    train_samples = load_split(args.data, "train")
    val_samples = load_split(args.data, "val")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(out / "config.yaml", config)
    result = train(
        config,
        train_samples,
        val_samples,
        variant=variant,
        out_dir=out,
        resume=args.resume,
        log=print,
    )
    print(
        f"finished {len(result.history)} epochs; best val CD "
        f"{result.best_val_cd:.6f}; checkpoints in {out}"
    )
    return 0


def cmd_complete(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    pixels = prepare_image(
        load_image(args.image), ckpt.config.data.image_size
    )
    partial = read_xyz(args.partial)
    seed = args.seed if args.seed is not None else 0
    _, stages = complete_single(model, pixels, partial, seed=seed)
    out_file = Path(args.out_file)
    if out_file.parent != Path(""):
        out_file.parent.mkdir(parents=True, exist_ok=True)
    write_xyz(out_file, stages[-1])
    print(f"wrote {stages[-1].count} points to {out_file}")
    if args.trace:
        stem = out_file.with_suffix("")
        for level, stage in enumerate(stages):
            stage_path = Path(f"{stem}.stage{level}.xyz")
            write_xyz(stage_path, stage)
        print(f"wrote {len(stages)} stage files alongside {out_file}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    tau = ckpt.config.train.tau
    samples = load_split(args.data, args.split)
    if args.self_test:
        results = evaluate_self(samples, tau)
        model = None
    else:
        model = model_from_checkpoint(ckpt)
        results = evaluate_samples(
            model, samples, tau, batch_size=ckpt.config.train.batch_size
        )
    rows = summarize(results)
    table = render_table(rows, tau)
    print(table)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(table + "\n")
    write_report(out / "report.tsv", rows, tau)
    if args.plots:
        plot_category_cd(out / "category_cd.png", rows)
        if model is not None and model.refiner is not None:
            stage_cds = stage_chamfers(
                model, samples, batch_size=ckpt.config.train.batch_size
            )
            plot_stage_cd(out / "stage_cd.png", stage_cds)
    print(f"report written to {out}")
    return 0


def cmd_metrics(args) -> int:
    pred = read_xyz(args.pred)
    gt = read_xyz(args.gt)
    report = fscore(pred, gt, tau=args.tau)
    print(f"tau       {report.tau:g}")
    print(f"chamfer   {report.chamfer:.12g}")
    print(f"chamfer_e3 {report.chamfer * 1e3:.12g}")
    print(f"precision {report.precision:.12g}")
    print(f"recall    {report.recall:.12g}")
    print(f"f1        {report.f1:.12g}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="viewfill", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config path (defaults used if omitted)")
    common.add_argument("--seed", type=int, help="override train.seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    p.add_argument("--out", required=True, help="dataset output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--data", required=True, help="dataset root directory")
    p.add_argument(
        "--variant",
        default="full",
        choices=[v.value for v in AblationVariant],
        help="ablation wiring",
    )
    p.add_argument("--resume", action="store_true", help="continue from last.ckpt")
    p.add_argument("--out", required=True, help="run output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("complete", parents=[common], help="complete one partial cloud")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="RGB PNG input")
    p.add_argument("--partial", required=True, help="partial cloud (.xyz)")
    p.add_argument("--out-file", required=True, help="output point file")
    p.add_argument(
        "--trace", action="store_true", help="also write per-stage point files"
    )
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("eval", parents=[common], help="evaluate on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset root directory")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--plots", action="store_true", help="write static plot images")
    p.add_argument(
        "--self-test",
        action="store_true",
        help="debug: score ground truth against itself",
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("metrics", help="metrics for a single pred/gt pair")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--tau", type=float, default=0.001)
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_EXIT
    except (ConfigError, InvalidInputError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (NumericalError, ViewfillError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except Exception as exc:  # unexpected -> runtime failure
        print(f"internal error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
