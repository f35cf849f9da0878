"""bcpnet analyze / bcpnet bench - complexity tables and latency measurements."""

from __future__ import annotations

import logging

from ..bench import run_bench
from ..complexity import FLOPS_RESOLUTIONS, count_params, macs_by_factor, resolution_sweep
from ..exceptions import error_boundary
from ..graph import describe
from .common import emit, emit_json, model_weights, run_config, wants_json

logger = logging.getLogger("bcpnet.cli")


class AnalyzeCommand:
    """Handles the `bcpnet analyze` CLI command."""

    @error_boundary(wants_json)
    def execute(self, args) -> int:
        cfg = run_config(args)
        g = cfg.build_graph()
        resolutions = args.res or list(FLOPS_RESOLUTIONS)
        sweep = resolution_sweep(g, resolutions)
        params = count_params(g)

        if wants_json(args):
            emit_json(
                {
                    "params": {"total": params.total, "backbone": params.backbone, "bcp": params.bcp, "head": params.head},
                    "resolutions": [
                        {
                            "h": r.input_resolution[0],
                            "w": r.input_resolution[1],
                            "macs": r.macs,
                            "flops": r.flops,
                            "other_ops": r.other_ops,
                            "macs_by_factor": macs_by_factor(r),
                        }
                        for r in sweep.reports
                    ],
                    "census": describe(g, *resolutions[0]) if args.census else None,
                }
            )
            return 0

        emit(sweep.to_csv(), args.out)
        if args.out is None:
            print()
        print(sweep.format_table())
        print(f"params: backbone {params.backbone}, bcp {params.bcp}, head {params.head}, total {params.total}")
        if args.layers:
            for report in sweep.reports:
                h, w = report.input_resolution
                print(f"\n# layers at {h}x{w}")
                print(report.to_csv(), end="")
        if args.census:
            info = describe(g, *resolutions[0])
            print("\n# census")
            for kind, count in info["census"].items():
                print(f"{kind:<12} {count}")
            print(f"{'fusion sites':<12} {info['fusion_sites']}")
            for name, shape in info["taps"].items():
                print(f"tap {name:<8} {'x'.join(map(str, shape))}")
        return 0


class BenchCommand:
    """Handles the `bcpnet bench` CLI command."""

    @error_boundary(wants_json)
    def execute(self, args) -> int:
        cfg = run_config(args)
        g = cfg.build_graph()
        weights = model_weights(args, g, seed=cfg.seed)
        report = run_bench(g, weights, args.res or None, warmup=args.warmup, iters=args.iters, seed=cfg.seed)
        if wants_json(args):
            emit_json({"monotonic": report.monotonic, "results": report.results})
            return 0
        emit(report.to_csv(), args.out)
        if args.out is None:
            print()
        print(report.format_table())
        return 0


__all__ = ["AnalyzeCommand", "BenchCommand"]
