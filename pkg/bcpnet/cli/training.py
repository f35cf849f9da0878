"""bcpnet train-toy / bcpnet ablate - desk-scale training on synthetic scenes."""

from __future__ import annotations

import logging
import sys

import msgspec

from ..config import RunConfig
from ..exceptions import AblationCheckFailed, UsageError, error_boundary
from ..modelio import save_weights, write_text
from ..train import (
    ABLATION_VARIANTS,
    SYNTH_CLASSES,
    TrainConfig,
    ablation_to_csv,
    eval_to_csv,
    history_to_csv,
    judge_ablation,
    run_ablation,
    run_seed_sweep,
    seed_sweep_to_csv,
    train_loop,
)
from .common import emit, emit_json, output_dir, run_config, wants_json

logger = logging.getLogger("bcpnet.cli")

SWEEP_VARIANTS = ("baseline", "max3")


def _train_config(cfg: RunConfig, args) -> TrainConfig:
    tc = cfg.train_config()
    if args.iters is None:
        return tc
    return TrainConfig(**{**msgspec.structs.asdict(tc), "total_iter": args.iters})


def _num_classes(cfg: RunConfig) -> int:
    if cfg.num_classes < len(SYNTH_CLASSES):
        raise UsageError(f"synthetic scenes have {len(SYNTH_CLASSES)} classes, num_classes is {cfg.num_classes}")
    return cfg.num_classes


class TrainToyCommand:
    """Handles the `bcpnet train-toy` CLI command."""

    @error_boundary(wants_json)
    def execute(self, args) -> int:
        cfg = run_config(args)
        g = cfg.build_graph(num_classes=_num_classes(cfg))
        tc = _train_config(cfg, args)
        logger.info("training %d iterations, batch %d, crop %dx%d", tc.total_iter, tc.batch, *tc.crop)
        result = train_loop(g, tc)

        out = output_dir(args.out, "runs/toy")
        save_weights(result.weights, out / "weights.bcpw")
        write_text(out / "history.csv", history_to_csv(result.history))
        names = list(SYNTH_CLASSES) + [str(i) for i in range(len(SYNTH_CLASSES), g.num_classes)]
        write_text(out / "eval.csv", eval_to_csv(result.per_class_iou, result.miou, names))

        if wants_json(args):
            emit_json({"out": str(out), "params": result.params, "per_class_iou": result.per_class_iou, "miou": result.miou})
        else:
            print(f"final mIoU {result.miou:.4f}")
        return 0


class AblateCommand:
    """Handles the `bcpnet ablate` CLI command."""

    @error_boundary(wants_json)
    def execute(self, args) -> int:
        cfg = run_config(args)
        if args.seeds:
            return self._sweep(cfg, args)
        if args.check:
            raise UsageError("--check needs --seeds")
        rows = run_ablation(
            _train_config(cfg, args),
            num_classes=_num_classes(cfg),
            schedule=cfg.schedule(),
            fusion_width=cfg.fusion_width,
            with_crop_row=args.with_crop_row,
        )
        if wants_json(args):
            emit_json(rows)
        else:
            emit(ablation_to_csv(rows), args.out)
        return 0

    def _sweep(self, cfg: RunConfig, args) -> int:
        if args.with_crop_row:
            raise UsageError("--with-crop-row and --seeds cannot be combined")
        rows = run_seed_sweep(
            _train_config(cfg, args),
            seeds=args.seeds,
            variants={name: ABLATION_VARIANTS[name] for name in SWEEP_VARIANTS},
            num_classes=_num_classes(cfg),
            schedule=cfg.schedule(),
            fusion_width=cfg.fusion_width,
        )
        verdict = judge_ablation(rows, threshold=args.threshold)
        if wants_json(args):
            emit_json({"rows": rows, "with_bcp": verdict.with_bcp, "without_bcp": verdict.without_bcp, "passed": verdict.passed})
        else:
            emit(seed_sweep_to_csv(rows), args.out)
            sys.stderr.write(verdict.describe() + "\n")
        if args.check and not verdict.passed:
            raise AblationCheckFailed(verdict.describe(), {"with_bcp": verdict.with_bcp, "without_bcp": verdict.without_bcp})
        return 0


__all__ = ["AblateCommand", "TrainToyCommand"]
