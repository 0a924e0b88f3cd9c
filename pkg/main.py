import argparse
import json
import os
import sys
from datetime import datetime
from typing import Any, Dict, List, Optional, Sequence, Tuple

from dotenv import load_dotenv

from src import functional as F
from src.arch_graph import MODEL_NAMES, describe_model
from src.config_manager import ConfigManager
from src.cost_analyzer import CountingConvention, compare, count, format_report, report_to_json, sweep_codewords
from src.errors import ArtifactIOError, ConfigurationError, EfficientFCNError
from src.gradcheck_suite import run_suite
from src.image_io import read_image, save_weightmap_images, write_mask
from src.inference import EVAL_SCALES, crop_to_content, evaluate_dataset, multiscale_infer, pad_to_multiple
from src.markdown_report_generator import MarkdownReportGenerator
from src.model import EfficientFCN
from src.synthetic_dataset import SyntheticShapes
from src.training import train_toy
from src.weights_io import load_weights, save_weights

load_dotenv()

DEFAULT_CONFIG = os.path.join("configs", "toy_training.json")
SWEEP_CODEWORDS = (32, 64, 128, 256, 512, 1024)


class Console:
    """Prefixed progress lines; errors are printed even when quiet."""

    def __init__(self, quiet: bool = False):
        self.quiet = quiet

    def say(self, message: str = "") -> None:
        if not self.quiet:
            print(message)

    def error(self, message: str) -> None:
        print(f"❌ {message}")


def parse_size(text: str) -> Tuple[int, int]:
    """'512x512' or '512' -> (512, 512)"""
    parts = text.lower().replace("×", "x").split("x")
    try:
        if len(parts) == 1:
            return int(parts[0]), int(parts[0])
        if len(parts) == 2:
            return int(parts[0]), int(parts[1])
    except ValueError:
        pass
    raise argparse.ArgumentTypeError(f"Expected HxW, got '{text}'")


def parse_numbers(text: str, kind=float) -> List:
    try:
        return [kind(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"Expected a comma-separated list, got '{text}'") from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="efficientfcn",
                                     description="EfficientFCN holistically-guided decoder toolkit")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train the toy model on synthetic shapes")
    train.add_argument("--config", default=DEFAULT_CONFIG)
    train.add_argument("--seed", type=int)
    train.add_argument("--max-iters", type=int)
    train.add_argument("--base-lr", type=float)
    train.add_argument("--weights-out", default=os.path.join("output", "toy_weights.efcn"))
    train.add_argument("--log", default=os.path.join("output", "metrics.jsonl"))

    evaluate = sub.add_parser("eval", help="multi-scale evaluation on the synthetic set")
    evaluate.add_argument("--weights", required=True)
    evaluate.add_argument("--config", default=DEFAULT_CONFIG)
    evaluate.add_argument("--scales", type=parse_numbers, default=list(EVAL_SCALES))
    evaluate.add_argument("--flip", action="store_true")
    evaluate.add_argument("--workers", type=int, default=1)

    infer = sub.add_parser("infer", help="segment one image and write a color mask")
    infer.add_argument("--weights", required=True)
    infer.add_argument("--image", required=True)
    infer.add_argument("--out", required=True)
    infer.add_argument("--config", default=DEFAULT_CONFIG)
    infer.add_argument("--scales", type=parse_numbers, default=[1.0])
    infer.add_argument("--flip", action="store_true")

    flops = sub.add_parser("flops", help="symbolic FLOPs/parameter count of a model")
    flops.add_argument("--model", choices=MODEL_NAMES + ("all",), default="efficientfcn")
    flops.add_argument("--input", type=parse_size, default=(512, 512))
    flops.add_argument("--codewords", type=int, default=256)
    flops.add_argument("--classes", type=int, default=60)
    _add_convention_flags(flops)
    flops.add_argument("--top", type=int, default=15, help="layers shown in the table")
    flops.add_argument("--json", action="store_true", help="print the report as JSON")
    flops.add_argument("--report", help="also write a markdown report to this file")

    sweep = sub.add_parser("sweep-codewords", help="EfficientFCN FLOPs as a function of the codeword count")
    sweep.add_argument("--ns", type=lambda t: parse_numbers(t, int), default=list(SWEEP_CODEWORDS))
    sweep.add_argument("--input", type=parse_size, default=(512, 512))
    sweep.add_argument("--classes", type=int, default=60)
    _add_convention_flags(sweep)
    sweep.add_argument("--report", help="also write a markdown report to this file")

    check = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    check.add_argument("--tol", type=float, default=1e-4)
    check.add_argument("--shapes", type=int, default=20)
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--skip-hgd", action="store_true")

    export = sub.add_parser("export-weightmaps", help="write the normalized weighting maps as images")
    export.add_argument("--weights", required=True)
    export.add_argument("--image", required=True)
    export.add_argument("--out-dir", required=True)
    export.add_argument("--config", default=DEFAULT_CONFIG)
    export.add_argument("--scale", type=int, default=8, help="nearest-neighbour enlargement")
    return parser


def _add_convention_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--per-mac", type=int, choices=(1, 2), default=1)
    parser.add_argument("--include-bn", action="store_true", help="count bn/relu/add/softmax")
    parser.add_argument("--include-pool", action="store_true", help="count pooling and resizing")
    parser.add_argument("--exclude-bias", action="store_true")


def convention_from_args(args) -> CountingConvention:
    return CountingConvention(flops_per_mac=args.per_mac, include_bn_relu=args.include_bn,
                              include_pool_resize=args.include_pool, include_bias=not args.exclude_bias)


def load_configs(path: Optional[str], console: Console, cli: Optional[Dict[str, Dict[str, Any]]] = None):
    manager = ConfigManager(path, quiet=console.quiet)
    if path and not manager.loaded:
        raise ConfigurationError(f"Could not load configuration from {path}")
    backbone_cfg, hgd_cfg, train_cfg = manager.resolve(cli)
    if tuple(backbone_cfg.input_size) != tuple(train_cfg.crop):
        backbone_cfg = backbone_cfg.model_copy(update={"input_size": tuple(train_cfg.crop)})
    return backbone_cfg, hgd_cfg, train_cfg


def load_model(weights: str, config: Optional[str], console: Console) -> EfficientFCN:
    backbone_cfg, hgd_cfg, train_cfg = load_configs(config, console)
    model = EfficientFCN.initialize(backbone_cfg, hgd_cfg, seed=train_cfg.seed)
    model.load_state_dict(load_weights(weights))
    console.say(f"✅ Loaded {len(model.state_dict())} tensors from {weights}")
    return model


def cmd_train(args, console: Console) -> int:
    cli = {"train": {"seed": args.seed, "max_iters": args.max_iters, "base_lr": args.base_lr}}
    backbone_cfg, hgd_cfg, train_cfg = load_configs(args.config, console, cli)
    console.say(f"🚀 Training toy EfficientFCN for {train_cfg.max_iters} iterations (seed {train_cfg.seed})")
    result = train_toy(train_cfg, backbone_cfg=backbone_cfg, hgd_cfg=hgd_cfg, log_path=args.log,
                       quiet=console.quiet)
    directory = os.path.dirname(args.weights_out)
    if directory:
        try:
            os.makedirs(directory, exist_ok=True)
        except OSError as e:
            raise ArtifactIOError("create weights directory", directory, e.strerror or str(e)) from e
    size = save_weights(result.model.state_dict(), args.weights_out)
    console.say(f"💾 Saved weights ({size:,} bytes) to {args.weights_out}")
    console.say(f"💾 Metric log: {args.log}")
    if result.final_metrics is not None:
        console.say(f"📊 Final training pixAcc={result.final_metrics.pix_acc:.4f} "
                    f"mIoU={result.final_metrics.mean_iou:.4f}")
    return 0


def cmd_eval(args, console: Console) -> int:
    model = load_model(args.weights, args.config, console)
    _, hgd_cfg, train_cfg = load_configs(args.config, Console(quiet=True))
    images, labels = SyntheticShapes(train_cfg.num_images, train_cfg.crop, seed=train_cfg.seed).as_arrays()
    metrics = evaluate_dataset(model.predict_logits, images, labels, hgd_cfg.n_classes,
                               scales=args.scales, flip=args.flip, workers=args.workers)
    console.say(f"📊 Scales {args.scales} flip={args.flip}: pixAcc={metrics.pix_acc:.4f} "
                f"mIoU={metrics.mean_iou:.4f}")
    print(json.dumps(metrics.as_record(), indent=2))
    return 0


def cmd_infer(args, console: Console) -> int:
    model = load_model(args.weights, args.config, console)
    image = read_image(args.image)[None]
    probs = multiscale_infer(model.predict_logits, image, args.scales, args.flip)
    write_mask(args.out, F.argmax_mask(probs)[0])
    console.say(f"💾 Mask written to {args.out}")
    return 0


def cmd_flops(args, console: Console) -> int:
    conv = convention_from_args(args)
    names = MODEL_NAMES if args.model == "all" else (args.model,)
    reports = [(name, count(describe_model(name, args.input, args.codewords, args.classes), conv))
               for name in names]
    if args.json:
        print(report_to_json(reports[0][1]) if len(reports) == 1
              else json.dumps({name: json.loads(report_to_json(r)) for name, r in reports}, indent=2))
    elif len(reports) == 1:
        print(format_report(reports[0][1], top=args.top))
    else:
        print(compare(reports, baseline="fcn32s").to_string(index=False))
    if args.report:
        generator = MarkdownReportGenerator(title="Compute Cost Report", output_file=args.report)
        generator.add_paragraph(f"Input {args.input[0]}x{args.input[1]}, {args.codewords} codewords, "
                                f"{args.classes} classes")
        if len(reports) > 1:
            generator.add_heading("Comparison", level=2)
            generator.add_dataframe(compare(reports, baseline="fcn32s"))
        for name, report in reports:
            generator.add_cost_report(name, report, top=args.top)
        generator.save()
    return 0


def cmd_sweep(args, console: Console) -> int:
    frame = sweep_codewords(args.ns, args.input, convention_from_args(args), n_classes=args.classes)
    print(frame.to_string(index=False, float_format=lambda v: f"{v:.3f}"))
    if args.report:
        generator = MarkdownReportGenerator(title="Codeword Sweep", output_file=args.report)
        generator.add_paragraph(f"EfficientFCN at {args.input[0]}x{args.input[1]}")
        generator.add_dataframe(frame)
        generator.save()
    return 0


def cmd_gradcheck(args, console: Console) -> int:
    reports = run_suite(num_shapes=args.shapes, tol=args.tol, seed=args.seed, include_hgd=not args.skip_hgd)
    failures = [r for r in reports if not r.passed]
    worst: Dict[str, float] = {}
    for report in reports:
        op = report.op_name.split("#")[0]
        worst[op] = max(worst.get(op, 0.0), report.max_relative_error)
    for op, error in worst.items():
        console.say(f"{'✅' if error <= args.tol else '❌'} {op:<20} worst rel. error {error:.3e}")
    for report in failures:
        console.error(report.summary())
    console.say(f"📊 {len(reports) - len(failures)}/{len(reports)} checks passed")
    return 1 if failures else 0


def cmd_export(args, console: Console) -> int:
    model = load_model(args.weights, args.config, console)
    image = read_image(args.image)[None]
    padded, offsets = pad_to_multiple(image)
    maps = crop_to_content(model.weighting_maps(padded)[0], offsets, image.shape[2:], stride=32)
    index = save_weightmap_images(maps, args.out_dir, scale=args.scale)
    console.say(f"💾 Wrote {len(index)} weighting maps and index.json to {args.out_dir}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "flops": cmd_flops,
    "sweep-codewords": cmd_sweep,
    "gradcheck": cmd_gradcheck,
    "export-weightmaps": cmd_export,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    console = Console(quiet=args.quiet)
    started = datetime.now()
    try:
        status = COMMANDS[args.command](args, console)
    except EfficientFCNError as e:
        console.error(str(e))
        return 1
    console.say(f"⏱️ {args.command} finished in {(datetime.now() - started).total_seconds():.2f}s")
    return status


if __name__ == "__main__":
    sys.exit(main())
