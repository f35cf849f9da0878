"""bcpnet infer - label map (and optional colour overlay) for one PNG."""

from __future__ import annotations

import logging
from pathlib import Path

from ..exceptions import error_boundary
from ..graph import forward
from ..modelio import palette, read_image, write_label_png, write_overlay
from ..nnops import argmax_labels
from .common import emit_json, model_weights, run_config, wants_json

logger = logging.getLogger("bcpnet.cli")


class InferCommand:
    """Handles the `bcpnet infer` CLI command."""

    @error_boundary(wants_json)
    def execute(self, args) -> int:
        cfg = run_config(args)
        g = cfg.build_graph()
        weights = model_weights(args, g, seed=cfg.seed, required=True)
        image = read_image(args.input).astype(g.dtype)
        logits, _ = forward(g, weights, image)
        labels = argmax_labels(logits)[0]

        out = Path(args.out) if args.out else Path(args.input).with_name(Path(args.input).stem + "_labels.png")
        out.parent.mkdir(parents=True, exist_ok=True)
        colours = palette(g.num_classes)
        write_label_png(labels, colours, out)
        logger.info("wrote %dx%d label map to %s", labels.shape[0], labels.shape[1], out)
        if args.overlay:
            write_overlay(image, labels, colours, args.overlay, alpha=args.alpha)
            logger.info("wrote overlay to %s", args.overlay)

        if wants_json(args):
            emit_json({"labels": str(out), "overlay": args.overlay, "shape": labels.shape})
        else:
            print(out)
        return 0


__all__ = ["InferCommand"]
