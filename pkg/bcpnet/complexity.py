"""
Analytic parameter and MAC accounting.

MACs count multiply-accumulates of convolutions and fusions only; FLOPs are
``2 * MACs``. Pool comparisons, resize blends, activations, residual adds and
the per-channel affines (which fold into the preceding convolution at
deployment) are tallied in the ``other_ops`` side column and never enter the
totals.

Example::

    from bcpnet.complexity import count_macs, resolution_sweep, FLOPS_RESOLUTIONS
    from bcpnet.graph import build_bcpnet

    g = build_bcpnet()
    report = count_macs(g, 512, 1024)
    print(report.flops / 1e9)
    print(resolution_sweep(g, FLOPS_RESOLUTIONS).format_table())
"""

from __future__ import annotations

import csv
import io
import math
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import msgspec

from .exceptions import GeometryError
from .graph import (
    ActivationSpec,
    AddSpec,
    AffineSpec,
    ConvSpec,
    FusionSpec,
    LayerSpec,
    ModelGraph,
    PoolSpec,
    ResizeSpec,
    SeparableSpec,
    Shape3,
    infer_shapes,
)

Resolution = Tuple[int, int]

# Published analytic FLOPs (G) of BCPNet per input resolution.
PUBLISHED_FLOPS_G: Dict[Resolution, float] = {
    (360, 640): 0.51,
    (713, 713): 1.12,
    (512, 1024): 1.13,
    (768, 1536): 2.53,
    (1024, 1024): 2.25,
    (1024, 2048): 4.50,
}
FLOPS_RESOLUTIONS: List[Resolution] = list(PUBLISHED_FLOPS_G)
PUBLISHED_PARAMS = {"total": 0.61e6, "backbone": 0.43e6, "bcp": 0.18e6}


class ParamCount(msgspec.Struct, frozen=True):
    per_layer: Dict[str, int]
    total: int

    def subtotal(self, prefix: str) -> int:
        return sum(v for k, v in self.per_layer.items() if k.startswith(prefix))

    @property
    def bcp(self) -> int:
        return self.subtotal("bcp.")

    @property
    def head(self) -> int:
        return self.subtotal("head.")

    @property
    def backbone(self) -> int:
        return self.total - self.bcp - self.head


class ReportRow(msgspec.Struct, frozen=True):
    layer: str
    kind: str
    out_shape: Shape3
    params: int
    macs: int
    other_ops: int = 0


class ComplexityReport(msgspec.Struct, frozen=True):
    rows: Tuple[ReportRow, ...]
    input_resolution: Resolution

    @property
    def params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def flops(self) -> int:
        return 2 * self.macs

    @property
    def other_ops(self) -> int:
        return sum(r.other_ops for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["layer", "kind", "out_shape", "params", "macs"])
        for r in self.rows:
            writer.writerow([r.layer, r.kind, "x".join(map(str, r.out_shape)), r.params, r.macs])
        writer.writerow(["total", "", "", self.params, self.macs])
        return buf.getvalue()


def layer_params(layer: LayerSpec) -> int:
    return sum(math.prod(shape) for shape in layer.params.slots().values())


def layer_cost(layer: LayerSpec, shapes: Mapping[str, Shape3]) -> Tuple[int, int]:
    """``(macs, other_ops)`` of one layer for a single image."""
    spec = layer.params
    c, h, w = shapes[layer.id]
    elements = c * h * w
    if isinstance(spec, ConvSpec):
        return h * w * spec.c_out * spec.k * spec.k * (spec.c_in // spec.groups), 0
    if isinstance(spec, SeparableSpec):
        return h * w * spec.c_in * spec.k * spec.k + h * w * spec.c_in * spec.c_out, 0
    if isinstance(spec, FusionSpec):
        return 2 * elements, 0
    if isinstance(spec, PoolSpec):
        return 0, elements * spec.k * spec.k
    if isinstance(spec, ResizeSpec):
        return 0, 4 * elements
    if isinstance(spec, AffineSpec):
        return 0, 2 * elements
    if isinstance(spec, (ActivationSpec, AddSpec)):
        return 0, elements
    return 0, 0


def count_params(g: ModelGraph) -> ParamCount:
    per_layer = {layer.id: layer_params(layer) for layer in g.layers}
    return ParamCount(per_layer=per_layer, total=sum(per_layer.values()))


def count_macs(g: ModelGraph, h: int, w: int) -> ComplexityReport:
    if h < 1 or w < 1:
        raise GeometryError(f"resolution {h}x{w} must be positive")
    shapes = infer_shapes(g, h, w)
    rows = []
    for layer in g.layers:
        macs, other = layer_cost(layer, shapes)
        rows.append(ReportRow(layer.id, layer.kind, shapes[layer.id], layer_params(layer), macs, other))
    return ComplexityReport(rows=tuple(rows), input_resolution=(h, w))


def macs_by_factor(report: ComplexityReport) -> Dict[int, int]:
    """MACs grouped by the downsample factor of each layer's output."""
    in_h = report.input_resolution[0]
    out: Dict[int, int] = {}
    for r in report.rows:
        factor = 2 ** round(math.log2(in_h / r.out_shape[1]))
        out[factor] = out.get(factor, 0) + r.macs
    return dict(sorted(out.items()))


def size_category(params: float, flops: float) -> str:
    """Model size band by parameter count and FLOPs (both absolute numbers)."""
    if params > 200e6 and flops > 300e9:
        return "large"
    if 100e9 <= flops < 300e9:
        return "medium"
    if params < 1e6 and flops < 10e9:
        return "tiny"
    return "small"


class SweepTable(msgspec.Struct, frozen=True):
    reports: Tuple[ComplexityReport, ...]

    @property
    def params(self) -> int:
        return self.reports[0].params

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["h", "w", "params", "macs", "flops", "other_ops"])
        for r in self.reports:
            writer.writerow([*r.input_resolution, r.params, r.macs, r.flops, r.other_ops])
        return buf.getvalue()

    def format_table(self, reference: Optional[Mapping[Resolution, float]] = None) -> str:
        """Human-readable table: params once, then one column per resolution."""
        reference = PUBLISHED_FLOPS_G if reference is None else reference
        heads = [f"{h}x{w}" for h, w in (r.input_resolution for r in self.reports)]
        cw = max(12, *(len(x) for x in heads))
        lines = [f"{'':<18}" + "".join(f"{x:>{cw}}" for x in heads)]
        lines.append(f"{'params (M)':<18}" + f"{self.params / 1e6:>{cw}.3f}")
        lines.append(f"{'MACs (G)':<18}" + "".join(f"{r.macs / 1e9:>{cw}.3f}" for r in self.reports))
        lines.append(f"{'FLOPs (G)':<18}" + "".join(f"{r.flops / 1e9:>{cw}.3f}" for r in self.reports))
        ref = [reference.get(r.input_resolution) for r in self.reports]
        if any(v is not None for v in ref):
            published = ["-" if v is None else f"{v:.2f}" for v in ref]
            ratio = ["-" if v is None else f"{r.flops / 1e9 / v:.2f}" for r, v in zip(self.reports, ref)]
            lines.append(f"{'published (G)':<18}" + "".join(f"{x:>{cw}}" for x in published))
            lines.append(f"{'ratio':<18}" + "".join(f"{x:>{cw}}" for x in ratio))
        lines.append(f"{'size class':<18}" + "".join(f"{size_category(r.params, r.flops):>{cw}}" for r in self.reports))
        return "\n".join(lines)


def resolution_sweep(g: ModelGraph, resolutions: Sequence[Resolution]) -> SweepTable:
    if not resolutions:
        raise GeometryError("resolution sweep needs at least one resolution")
    return SweepTable(reports=tuple(count_macs(g, h, w) for h, w in resolutions))


__all__ = [
    "PUBLISHED_PARAMS",
    "PUBLISHED_FLOPS_G",
    "FLOPS_RESOLUTIONS",
    "ComplexityReport",
    "ParamCount",
    "ReportRow",
    "SweepTable",
    "count_macs",
    "count_params",
    "layer_cost",
    "layer_params",
    "macs_by_factor",
    "resolution_sweep",
    "size_category",
]
