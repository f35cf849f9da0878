"""Main CLI entry point for BCPNet."""

import argparse
import logging
import sys
from typing import Optional, Sequence

from ..exceptions import EXIT_OK, EXIT_USAGE
from ..train import ABLATION_MIOU_THRESHOLD
from .analyze import AnalyzeCommand, BenchCommand
from .common import resolution_arg, seed_list
from .gradcheck import GradcheckCommand
from .infer import InferCommand
from .training import AblateCommand, TrainToyCommand

_COMMANDS = {
    "analyze": AnalyzeCommand,
    "bench": BenchCommand,
    "infer": InferCommand,
    "gradcheck": GradcheckCommand,
    "train-toy": TrainToyCommand,
    "ablate": AblateCommand,
}


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", default=None, help="Run config file (key = value lines)")
    common.add_argument("--seed", type=int, default=None, help="Override the config seed")
    common.add_argument("--classes", type=int, default=None, help="Override the number of classes")
    common.add_argument("--out", "-o", default=None, help="Output file or directory")
    common.add_argument("--json", action="store_true", dest="json_output", help="Machine-readable output and errors")
    common.add_argument("--verbose", "-v", action="store_true", help="Log progress (INFO)")
    common.add_argument("--debug", action="store_true", help="Log everything (DEBUG)")
    return common


def _res_argument(parser: argparse.ArgumentParser, help_text: str) -> None:
    parser.add_argument("--res", action="append", type=resolution_arg, default=None, metavar="HxW", help=help_text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bcpnet",
        description="BCPNet - real-time semantic segmentation engine with analytic complexity accounting.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  bcpnet analyze                              Params and FLOPs at the published resolutions
  bcpnet analyze --res 512x1024 --layers      Per-layer MACs at one resolution
  bcpnet bench --res 360x640 --iters 20       Forward latency (median ms, fps)
  bcpnet gradcheck                            Finite-difference check of the backward pass
  bcpnet train-toy -c configs/toy.cfg -o runs/toy
  bcpnet infer -c configs/toy.cfg --weights runs/toy/weights.bcpw --input scene.png
  bcpnet ablate -c configs/toy.cfg --with-crop-row
  bcpnet ablate -c configs/ablation.cfg --seeds 0,1,2 --check
        """,
    )
    common = _common_parser()
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    # --- bcpnet analyze ---
    analyze = subparsers.add_parser("analyze", parents=[common], help="Parameter and FLOPs tables")
    _res_argument(analyze, "Input resolution, repeatable (default: the six published resolutions)")
    analyze.add_argument("--layers", action="store_true", help="Also print the per-layer report")
    analyze.add_argument("--census", action="store_true", help="Also print the layer-kind census and tap shapes")

    # --- bcpnet bench ---
    bench = subparsers.add_parser("bench", parents=[common], help="Forward-pass latency benchmark")
    _res_argument(bench, "Input resolution, repeatable (default: the eight published resolutions)")
    bench.add_argument("--weights", default=None, help="Weights file (default: seeded initial weights)")
    bench.add_argument("--warmup", type=int, default=10, help="Discarded passes per resolution (default: 10)")
    bench.add_argument("--iters", type=int, default=50, help="Timed passes per resolution (default: 50)")

    # --- bcpnet infer ---
    infer = subparsers.add_parser("infer", parents=[common], help="Segment one PNG image")
    infer.add_argument("--input", "-i", required=True, help="8-bit RGB or grayscale PNG")
    infer.add_argument("--weights", default=None, help="Weights file (required)")
    infer.add_argument("--overlay", default=None, help="Also write a colour overlay PNG here")
    infer.add_argument("--alpha", type=float, default=0.5, help="Overlay opacity (default: 0.5)")

    # --- bcpnet gradcheck ---
    gradcheck = subparsers.add_parser("gradcheck", parents=[common], help="Check gradients against finite differences")
    _res_argument(gradcheck, "Input resolution (default: 64x64)")
    gradcheck.add_argument("--weights", default=None, help="Weights file (default: seeded initial weights)")
    gradcheck.add_argument("--per-slot", type=int, default=1, help="Coordinates checked per weight slot (default: 1)")
    gradcheck.add_argument("--eps", type=float, default=1e-5, help="Central-difference step (default: 1e-5)")
    gradcheck.add_argument("--tol", type=float, default=1e-4, help="Maximum relative error (default: 1e-4)")

    # --- bcpnet train-toy ---
    train = subparsers.add_parser("train-toy", parents=[common], help="Train on synthetic 3-class scenes")
    train.add_argument("--iters", type=int, default=None, help="Override total_iter")

    # --- bcpnet ablate ---
    ablate = subparsers.add_parser("ablate", parents=[common], help="Train the four context-pooling variants")
    ablate.add_argument("--iters", type=int, default=None, help="Override total_iter")
    ablate.add_argument("--with-crop-row", action="store_true", help="Add the enlarged-crop row")
    ablate.add_argument("--seeds", type=seed_list, default=None, metavar="S,S,...", help="Train baseline and max3 once per seed and report medians")
    ablate.add_argument("--threshold", type=float, default=ABLATION_MIOU_THRESHOLD, help="Minimum median mIoU with BCP (default: 0.6)")
    ablate.add_argument("--check", action="store_true", help="Exit 1 unless BCP beats the baseline and reaches --threshold")

    return parser


def configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.debug else logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    if args.command is None:
        parser.print_help()
        return EXIT_OK

    configure_logging(args)
    return _COMMANDS[args.command]().execute(args)


if __name__ == "__main__":
    sys.exit(main())
