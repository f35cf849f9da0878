"""bcpnet gradcheck - end-to-end finite-difference check of the backward pass."""

from __future__ import annotations

import logging

import msgspec

from ..autograd import check_graph_gradients
from ..exceptions import error_boundary
from .common import emit, emit_json, model_weights, random_input, run_config, wants_json

logger = logging.getLogger("bcpnet.cli")

DEFAULT_RESOLUTION = (64, 64)


class GradcheckCommand:
    """Handles the `bcpnet gradcheck` CLI command."""

    @error_boundary(wants_json)
    def execute(self, args) -> int:
        cfg = msgspec.structs.replace(run_config(args), dtype="float64")
        g = cfg.build_graph()
        weights = model_weights(args, g, seed=cfg.seed)
        h, w = args.res[0] if args.res else DEFAULT_RESOLUTION
        x = random_input(h, w, seed=cfg.seed, dtype="float64")
        report = check_graph_gradients(g, weights, x, eps=args.eps, per_slot=args.per_slot, seed=cfg.seed)

        if wants_json(args):
            emit_json({"tol": args.tol, "max_rel_error": report.max_rel_error, "slots": report.slots})
        else:
            lines = ["slot,max_rel_error,skipped"]
            lines += [f"{s.name},{s.max_rel_error:.3e},{s.skipped}" for s in report.slots]
            emit("\n".join(lines), args.out)
            print(f"max relative error {report.max_rel_error:.3e} over {len(report.slots)} slots (tol {args.tol:g})")
        report.raise_for(args.tol)
        return 0


__all__ = ["GradcheckCommand"]
