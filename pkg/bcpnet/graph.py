"""
BCPNet as an explicit, topologically ordered layer list.

The graph is built in four stages, each returning the builder so stages can
be composed or inspected on their own:

- :func:`build_backbone` - MobileNet-style inverted-residual encoder with taps
  ``layer1`` (1/2) ... ``layer5`` (1/32).
- :func:`build_context_pooling` - two stride-2 pools producing ``p6`` (1/64)
  and ``p7`` (1/128).
- :func:`build_bcp_module` - lateral projections plus the three propagation
  paths (top-down, bottom-up, top-down) with one fusion site per adjacent
  level pair.
- :func:`build_classifier` - 1x1 classifier and bilinear upsample to the
  input size; returns the frozen :class:`ModelGraph`.

:func:`forward` runs a graph against a named weight store and frees each
activation after its last consumer; :func:`forward_tape` keeps everything the
backward pass needs.

Example::

    from bcpnet.graph import AblationConfig, build_bcpnet, init_weights, forward
    from bcpnet.tensor import create

    g = build_bcpnet(AblationConfig(), num_classes=19)
    weights = init_weights(g, seed=0)
    logits, taps = forward(g, weights, create((1, 3, 128, 128), 0.5))
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import msgspec
import numpy as np

from .exceptions import ConfigError, ShapeError, StateError, WeightStoreError
from .nnops import (
    bilinear_resize_array,
    conv2d_array,
    out_size,
    pool2d_array,
    separable_conv_array,
    weighted_fusion_array,
)
from .tensor import Shape4, Tensor4, resolve_dtype, unary_array

logger = logging.getLogger("bcpnet.graph")

Shape3 = Tuple[int, int, int]
WeightStore = Dict[str, Tensor4]

INPUT = "input"
PYRAMID_FACTORS = (4, 8, 16, 32, 64, 128)
DEFAULT_STAGES: Tuple[Tuple[int, int, int], ...] = ((16, 1, 1), (24, 2, 2), (32, 3, 2), (64, 4, 2), (96, 3, 2))
DEFAULT_FUSION_WIDTH = 96


# ============================================================================
# Layer parameter records
# ============================================================================


class ConvSpec(msgspec.Struct, frozen=True, tag="conv"):
    c_in: int
    c_out: int
    k: int = 1
    stride: int = 1
    padding: int = 0
    groups: int = 1
    bias: bool = True

    def slots(self) -> Dict[str, Shape4]:
        out = {"weight": (self.c_out, self.c_in // self.groups, self.k, self.k)}
        if self.bias:
            out["bias"] = (1, self.c_out, 1, 1)
        return out

    def out_shape(self, src: Shape3) -> Shape3:
        if src[0] != self.c_in:
            raise ShapeError(f"conv expects {self.c_in} input channels, got {src[0]}")
        return (self.c_out, out_size(src[1], self.k, self.stride, self.padding), out_size(src[2], self.k, self.stride, self.padding))


class SeparableSpec(msgspec.Struct, frozen=True, tag="separable"):
    """Depthwise ``k x k`` (no bias) followed by pointwise ``1 x 1`` with bias."""

    c_in: int
    c_out: int
    k: int = 3
    stride: int = 1
    bias: bool = True

    def slots(self) -> Dict[str, Shape4]:
        out = {"dw.weight": (self.c_in, 1, self.k, self.k), "pw.weight": (self.c_out, self.c_in, 1, 1)}
        if self.bias:
            out["pw.bias"] = (1, self.c_out, 1, 1)
        return out

    def out_shape(self, src: Shape3) -> Shape3:
        if src[0] != self.c_in:
            raise ShapeError(f"separable conv expects {self.c_in} input channels, got {src[0]}")
        p = self.k // 2
        return (self.c_out, out_size(src[1], self.k, self.stride, p), out_size(src[2], self.k, self.stride, p))


class PoolSpec(msgspec.Struct, frozen=True, tag="pool"):
    kind: Literal["max", "avg"] = "max"
    k: int = 3
    stride: int = 2
    padding: int = 1

    def slots(self) -> Dict[str, Shape4]:
        return {}

    def out_shape(self, src: Shape3) -> Shape3:
        return (src[0], out_size(src[1], self.k, self.stride, self.padding), out_size(src[2], self.k, self.stride, self.padding))


class ResizeSpec(msgspec.Struct, frozen=True, tag="resize"):
    """Bilinear resize to the spatial shape of layer ``ref`` (or the graph input)."""

    ref: str = INPUT

    def slots(self) -> Dict[str, Shape4]:
        return {}


class FusionSpec(msgspec.Struct, frozen=True, tag="fusion"):
    """``theta * inputs[0] + sigma * inputs[1]``."""

    channels: int

    def slots(self) -> Dict[str, Shape4]:
        return {"theta": (1, 1, 1, 1), "sigma": (1, 1, 1, 1)}


class AffineSpec(msgspec.Struct, frozen=True, tag="affine"):
    channels: int

    def slots(self) -> Dict[str, Shape4]:
        return {"scale": (1, self.channels, 1, 1), "shift": (1, self.channels, 1, 1)}


class ActivationSpec(msgspec.Struct, frozen=True, tag="activation"):
    fn: Literal["relu", "relu6"] = "relu"

    def slots(self) -> Dict[str, Shape4]:
        return {}


class AddSpec(msgspec.Struct, frozen=True, tag="add"):
    def slots(self) -> Dict[str, Shape4]:
        return {}


LayerParams = Union[ConvSpec, SeparableSpec, PoolSpec, ResizeSpec, FusionSpec, AffineSpec, ActivationSpec, AddSpec]

LAYER_KINDS = ("conv", "separable", "pool", "resize", "fusion", "affine", "activation", "add")


class LayerSpec(msgspec.Struct, frozen=True):
    id: str
    params: LayerParams
    inputs: Tuple[str, ...]

    @property
    def kind(self) -> str:
        return self.params.__struct_config__.tag

    def param_names(self) -> Dict[str, Shape4]:
        """Fully qualified weight names (``<id>.<slot>``) and their shapes."""
        return {f"{self.id}.{slot}": shape for slot, shape in self.params.slots().items()}

    def out_shape(self, shapes: Mapping[str, Shape3]) -> Shape3:
        srcs = [shapes[i] for i in self.inputs]
        p = self.params
        if isinstance(p, (ConvSpec, SeparableSpec, PoolSpec)):
            return p.out_shape(srcs[0])
        if isinstance(p, ResizeSpec):
            ref = shapes[p.ref]
            return (srcs[0][0], ref[1], ref[2])
        if isinstance(p, (FusionSpec, AddSpec)):
            if srcs[0] != srcs[1]:
                raise ShapeError(f"layer {self.id!r} joins mismatched shapes {srcs[0]} and {srcs[1]}")
            return srcs[0]
        if isinstance(p, AffineSpec) and srcs[0][0] != p.channels:
            raise ShapeError(f"affine {self.id!r} expects {p.channels} channels, got {srcs[0][0]}")
        return srcs[0]


# ============================================================================
# Configuration records
# ============================================================================


class AblationConfig(msgspec.Struct, frozen=True):
    """One row of the ablation table: BCP on/off and the context pooling variant."""

    use_bcp: bool = True
    context_pool_kind: Literal["max", "avg"] = "max"
    context_pool_k: Literal[3, 5] = 3

    def __post_init__(self):
        if self.context_pool_kind not in ("max", "avg"):
            raise ConfigError(f"context_pool_kind must be 'max' or 'avg', got {self.context_pool_kind!r}")
        if self.context_pool_k not in (3, 5):
            raise ConfigError(f"context_pool_k must be 3 or 5, got {self.context_pool_k!r}")


ABLATION_VARIANTS: Dict[str, AblationConfig] = {
    "baseline": AblationConfig(use_bcp=False),
    "max3": AblationConfig(context_pool_kind="max", context_pool_k=3),
    "avg3": AblationConfig(context_pool_kind="avg", context_pool_k=3),
    "max5": AblationConfig(context_pool_kind="max", context_pool_k=5),
}


def make_divisible(value: float, divisor: int = 8) -> int:
    rounded = max(divisor, int(value + divisor / 2) // divisor * divisor)
    if rounded < 0.9 * value:
        rounded += divisor
    return rounded


class BackboneSchedule(msgspec.Struct, frozen=True):
    """
    Channel schedule of the encoder.

    ``stages`` lists ``(channels, blocks, stride)`` per stage before the width
    multiplier; channel counts are rounded to multiples of 8.
    """

    stem_channels: int = 16
    stages: Tuple[Tuple[int, int, int], ...] = DEFAULT_STAGES
    expansion: int = 6
    width_mult: float = 0.85

    def resolved(self) -> Tuple[int, List[Tuple[int, int, int]]]:
        stem = make_divisible(self.stem_channels * self.width_mult)
        return stem, [(make_divisible(c * self.width_mult), n, s) for c, n, s in self.stages]

    def validate(self) -> None:
        if len(self.stages) != 5:
            raise ConfigError(f"backbone needs exactly 5 stages reaching 1/32, got {len(self.stages)}")
        factor = 2
        for idx, (c, n, s) in enumerate(self.stages):
            if c < 1 or n < 1 or s not in (1, 2):
                raise ConfigError(f"stage {idx + 1} ({c}, {n}, {s}) invalid")
            factor *= s
            if factor != 2 ** (idx + 1):
                raise ConfigError(f"stage {idx + 1} lands at 1/{factor}, expected 1/{2 ** (idx + 1)}")
        if self.stem_channels < 1 or self.expansion < 1 or self.width_mult <= 0:
            raise ConfigError("stem_channels, expansion and width_mult must be positive")


class ModelGraph(msgspec.Struct, frozen=True):
    layers: Tuple[LayerSpec, ...]
    pyramid_levels: Tuple[Tuple[str, int], ...]
    classifier_input: str
    num_classes: int
    variant: AblationConfig
    taps: Dict[str, str]
    schedule: BackboneSchedule = msgspec.field(default_factory=BackboneSchedule)
    fusion_width: int = DEFAULT_FUSION_WIDTH
    dtype: str = "float32"

    @property
    def output(self) -> str:
        return self.layers[-1].id

    def by_id(self) -> Dict[str, LayerSpec]:
        return {layer.id: layer for layer in self.layers}

    def with_dtype(self, dtype: str) -> "ModelGraph":
        return msgspec.structs.replace(self, dtype=resolve_dtype(dtype).name)


# ============================================================================
# Builder
# ============================================================================


class GraphBuilder:
    """Partial graph accumulated by the build stages."""

    def __init__(self, schedule: BackboneSchedule, variant: AblationConfig):
        self.schedule = schedule
        self.variant = variant
        self.layers: List[LayerSpec] = []
        self.taps: Dict[str, str] = {}
        self.pyramid: Dict[int, str] = {}
        self.fusion_width = 0
        self.head_input: Optional[str] = None
        self._ids = {INPUT}

    def add(self, layer_id: str, params: LayerParams, *inputs: str) -> str:
        if layer_id in self._ids:
            raise ConfigError(f"duplicate layer id {layer_id!r}")
        missing = [i for i in inputs if i not in self._ids]
        if isinstance(params, ResizeSpec) and params.ref not in self._ids:
            missing.append(params.ref)
        if missing:
            raise ConfigError(f"layer {layer_id!r} consumes unknown layers {missing}")
        self.layers.append(LayerSpec(layer_id, params, tuple(inputs)))
        self._ids.add(layer_id)
        return layer_id

    def conv_unit(self, layer_id: str, src: str, conv: Union[ConvSpec, SeparableSpec], act: Optional[str]) -> str:
        """Conv (or separable) then per-channel affine then optional activation."""
        out = self.add(layer_id, conv, src)
        out = self.add(f"{layer_id}.affine", AffineSpec(conv.c_out), out)
        if act is not None:
            out = self.add(f"{layer_id}.act", ActivationSpec(act), out)
        return out


def inverted_residual(b: GraphBuilder, prefix: str, src: str, c_in: int, c_out: int, stride: int, expansion: int) -> str:
    hidden = c_in * expansion
    out = src
    if expansion != 1:
        out = b.conv_unit(f"{prefix}.expand", out, ConvSpec(c_in, hidden), "relu6")
    out = b.conv_unit(f"{prefix}.dw", out, ConvSpec(hidden, hidden, 3, stride, 1, groups=hidden, bias=False), "relu6")
    out = b.conv_unit(f"{prefix}.project", out, ConvSpec(hidden, c_out), None)
    if stride == 1 and c_in == c_out:
        out = b.add(f"{prefix}.add", AddSpec(), src, out)
    return out


def build_backbone(schedule: BackboneSchedule = BackboneSchedule(), variant: AblationConfig = AblationConfig()) -> GraphBuilder:
    schedule.validate()
    b = GraphBuilder(schedule, variant)
    stem, stages = schedule.resolved()
    cur = b.conv_unit("stem", INPUT, ConvSpec(3, stem, 3, 2, 1), "relu6")
    c_prev = stem
    factor = 2
    for s_idx, (c, n, stride) in enumerate(stages, start=1):
        for blk in range(n):
            cur = inverted_residual(b, f"layer{s_idx}.{blk}", cur, c_prev, c, stride if blk == 0 else 1, schedule.expansion)
            c_prev = c
        factor *= stride
        b.taps[f"layer{s_idx}"] = cur
        if factor >= 4:
            b.pyramid[factor] = cur
    return b


def build_context_pooling(b: GraphBuilder, cfg: AblationConfig) -> GraphBuilder:
    if 32 not in b.pyramid:
        raise ConfigError("context pooling needs the 1/32 backbone level")
    pool = PoolSpec(cfg.context_pool_kind, cfg.context_pool_k, 2, cfg.context_pool_k // 2)
    b.taps["p6"] = b.pyramid[64] = b.add("p6", pool, b.pyramid[32])
    b.taps["p7"] = b.pyramid[128] = b.add("p7", pool, "p6")
    return b


def channels_of(b: GraphBuilder, layer_id: str) -> int:
    shapes: Dict[str, Shape3] = {INPUT: (3, 256, 256)}
    for layer in b.layers:
        shapes[layer.id] = layer.out_shape(shapes)
    return shapes[layer_id][0]


def fusion_site(b: GraphBuilder, prefix: str, s: str, c: str, width: int) -> str:
    fused = b.add(f"{prefix}.fuse", FusionSpec(width), s, c)
    return b.conv_unit(f"{prefix}.sep", fused, SeparableSpec(width, width, 3), "relu")


def build_bcp_module(b: GraphBuilder, fusion_width: int = DEFAULT_FUSION_WIDTH) -> GraphBuilder:
    missing = [f for f in PYRAMID_FACTORS if f not in b.pyramid]
    if missing:
        raise ConfigError(f"BCP module needs pyramid levels at 1/{PYRAMID_FACTORS}, missing {missing}")
    if fusion_width < 1:
        raise ConfigError(f"fusion_width must be positive, got {fusion_width}")
    b.fusion_width = fusion_width

    lateral = {}
    for f in PYRAMID_FACTORS:
        src = b.pyramid[f]
        lateral[f] = b.conv_unit(f"bcp.lat{f}", src, ConvSpec(channels_of(b, src), fusion_width), "relu")

    down = PYRAMID_FACTORS[::-1]
    # top-down
    path_a = {128: lateral[128]}
    for f in down[1:]:
        up = b.add(f"bcp.a{f}.up", ResizeSpec(lateral[f]), path_a[2 * f])
        path_a[f] = fusion_site(b, f"bcp.a{f}", lateral[f], up, fusion_width)
    # bottom-up
    path_b = {4: path_a[4]}
    for f in PYRAMID_FACTORS[1:]:
        pooled = b.add(f"bcp.b{f}.down", PoolSpec("max", 3, 2, 1), path_b[f // 2])
        path_b[f] = fusion_site(b, f"bcp.b{f}", path_a[f], pooled, fusion_width)
    # top-down again
    path_c = {128: path_b[128]}
    for f in down[1:]:
        up = b.add(f"bcp.c{f}.up", ResizeSpec(path_b[f]), path_c[2 * f])
        path_c[f] = fusion_site(b, f"bcp.c{f}", path_b[f], up, fusion_width)

    for name, path in (("a", path_a), ("b", path_b), ("c", path_c)):
        for f, layer_id in path.items():
            b.taps[f"bcp.{name}{f}"] = layer_id
    b.head_input = path_c[8]
    return b


def build_classifier(b: GraphBuilder, num_classes: int) -> ModelGraph:
    if num_classes < 1:
        raise ConfigError(f"num_classes must be >= 1, got {num_classes}")
    src = b.head_input or b.taps.get("layer3")
    if src is None:
        raise ConfigError("classifier needs the 1/8 feature level")
    logits = b.add("head.conv", ConvSpec(channels_of(b, src), num_classes), src)
    b.add("head.upsample", ResizeSpec(INPUT), logits)
    return ModelGraph(
        layers=tuple(b.layers),
        pyramid_levels=tuple((b.pyramid[f], f) for f in sorted(b.pyramid) if b.variant.use_bcp or f <= 32),
        classifier_input=src,
        num_classes=num_classes,
        variant=b.variant,
        taps=dict(b.taps),
        schedule=b.schedule,
        fusion_width=b.fusion_width,
    )


def build_bcpnet(
    cfg: AblationConfig = AblationConfig(),
    num_classes: int = 19,
    schedule: BackboneSchedule = BackboneSchedule(),
    fusion_width: int = DEFAULT_FUSION_WIDTH,
    dtype: str = "float32",
) -> ModelGraph:
    b = build_backbone(schedule, cfg)
    if cfg.use_bcp:
        build_context_pooling(b, cfg)
        build_bcp_module(b, fusion_width)
    g = build_classifier(b, num_classes).with_dtype(dtype)
    logger.debug("built %s graph: %d layers, %d classes", "bcp" if cfg.use_bcp else "baseline", len(g.layers), num_classes)
    return g


# ============================================================================
# Weights
# ============================================================================


def param_slots(g: ModelGraph) -> Dict[str, Shape4]:
    """Every named weight slot of ``g`` in layer order."""
    slots: Dict[str, Shape4] = {}
    for layer in g.layers:
        slots.update(layer.param_names())
    return slots


def fan_in(shape: Shape4) -> int:
    return shape[1] * shape[2] * shape[3]


def init_weights(g: ModelGraph, seed: int = 0, rng: Optional[np.random.Generator] = None) -> WeightStore:
    """
    Deterministic initial weights.

    Conv kernels draw from ``N(0, 1 / fan_in)``; biases and affine shifts are
    zero; affine scales and fusion scalars are one.
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    dt = resolve_dtype(g.dtype)
    store: WeightStore = {}
    for name, shape in param_slots(g).items():
        slot = name.rsplit(".", 1)[1]
        if slot == "weight":
            arr = rng.normal(0.0, 1.0 / math.sqrt(fan_in(shape)), size=shape)
        elif slot in ("scale", "theta", "sigma"):
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        store[name] = Tensor4(arr.astype(dt))
    return store


def check_weights(g: ModelGraph, weights: Mapping[str, Tensor4], strict: bool = False) -> None:
    slots = param_slots(g)
    missing = [n for n in slots if n not in weights]
    if missing:
        raise WeightStoreError(f"{len(missing)} weight slot(s) missing, first {missing[0]!r}", {"missing": missing[:10]})
    for name, shape in slots.items():
        if weights[name].shape != shape:
            raise WeightStoreError(f"slot {name!r} has shape {weights[name].shape}, expected {shape}")
    if strict:
        extra = sorted(set(weights) - set(slots))
        if extra:
            raise WeightStoreError(f"{len(extra)} unknown weight(s), first {extra[0]!r}", {"unknown": extra[:10]})


# ============================================================================
# Shapes and census
# ============================================================================


def infer_shapes(g: ModelGraph, h: int, w: int) -> Dict[str, Shape3]:
    """Per-layer ``(c, h, w)`` for an input of ``h x w`` pixels."""
    shapes: Dict[str, Shape3] = {INPUT: (3, h, w)}
    for layer in g.layers:
        shapes[layer.id] = layer.out_shape(shapes)
    return shapes


def describe(g: ModelGraph, h: Optional[int] = None, w: Optional[int] = None) -> Dict[str, Any]:
    """Layer-kind census, fusion-site count, parameter total and (optionally) tap shapes."""
    census = Counter(layer.kind for layer in g.layers)
    out: Dict[str, Any] = {
        "variant": msgspec.to_builtins(g.variant),
        "num_classes": g.num_classes,
        "layers": len(g.layers),
        "census": {kind: census.get(kind, 0) for kind in LAYER_KINDS},
        "fusion_sites": census.get("fusion", 0),
        "params": sum(math.prod(s) for s in param_slots(g).values()),
        "classifier_input": g.classifier_input,
    }
    if h is not None and w is not None:
        shapes = infer_shapes(g, h, w)
        out["taps"] = {name: shapes[layer_id] for name, layer_id in g.taps.items()}
    return out


# ============================================================================
# Execution
# ============================================================================


@dataclass
class Tape:
    """Every layer output of one forward pass plus auxiliary backward state."""

    values: Dict[str, np.ndarray]
    aux: Dict[str, Any] = field(default_factory=dict)
    output: str = ""

    @property
    def logits(self) -> Tensor4:
        return Tensor4(self.values[self.output])

    def get(self, layer_id: str) -> np.ndarray:
        try:
            return self.values[layer_id]
        except KeyError:
            raise StateError(f"activation {layer_id!r} was not retained")


def layer_weights(layer: LayerSpec, weights: Mapping[str, Tensor4]) -> Dict[str, np.ndarray]:
    return {slot: weights[f"{layer.id}.{slot}"].data for slot in layer.params.slots()}


def run_layer(layer: LayerSpec, args: Sequence[np.ndarray], p: Dict[str, np.ndarray], shapes: Mapping[str, Tuple[int, ...]]):
    """Execute one layer; returns ``(output, aux)``."""
    spec = layer.params
    if isinstance(spec, ConvSpec):
        return conv2d_array(args[0], p["weight"], p.get("bias"), spec.stride, spec.padding, spec.groups), None
    if isinstance(spec, SeparableSpec):
        out, mid = separable_conv_array(args[0], p["dw.weight"], p["pw.weight"], p.get("pw.bias"), spec.stride)
        return out, mid
    if isinstance(spec, PoolSpec):
        return pool2d_array(args[0], spec.kind, spec.k, spec.stride, spec.padding)
    if isinstance(spec, ResizeSpec):
        ref = shapes[spec.ref]
        return bilinear_resize_array(args[0], ref[-2], ref[-1]), None
    if isinstance(spec, FusionSpec):
        return weighted_fusion_array(args[0], args[1], p["theta"].item(), p["sigma"].item()), None
    if isinstance(spec, AffineSpec):
        return args[0] * p["scale"] + p["shift"], None
    if isinstance(spec, ActivationSpec):
        return unary_array(args[0], spec.fn), None
    if isinstance(spec, AddSpec):
        return args[0] + args[1], None
    raise ConfigError(f"unknown layer kind {layer.kind!r}")


def last_use(g: ModelGraph) -> Dict[str, int]:
    uses: Dict[str, int] = {}
    for idx, layer in enumerate(g.layers):
        for src in layer.inputs:
            uses[src] = idx
    return uses


def prepare_input(g: ModelGraph, x: Tensor4) -> np.ndarray:
    if x.c != 3:
        raise ShapeError(f"input must have 3 channels, got {x.c}")
    return x.data.astype(resolve_dtype(g.dtype), copy=False)


def execute(g: ModelGraph, weights: Mapping[str, Tensor4], x: Tensor4, keep_all: bool):
    check_weights(g, weights)
    values: Dict[str, np.ndarray] = {INPUT: prepare_input(g, x)}
    shapes: Dict[str, Tuple[int, ...]] = {INPUT: x.shape}
    aux: Dict[str, Any] = {}
    keep = set(g.taps.values()) | {g.output}
    uses = last_use(g)
    for idx, layer in enumerate(g.layers):
        out, extra = run_layer(layer, [values[i] for i in layer.inputs], layer_weights(layer, weights), shapes)
        values[layer.id] = out
        shapes[layer.id] = out.shape
        if keep_all:
            if extra is not None:
                aux[layer.id] = extra
            continue
        for src in layer.inputs:
            if uses.get(src) == idx and src not in keep:
                del values[src]
    return values, aux


def forward(g: ModelGraph, weights: Mapping[str, Tensor4], x: Tensor4) -> Tuple[Tensor4, Dict[str, Tensor4]]:
    values, _ = execute(g, weights, x, keep_all=False)
    taps = {name: Tensor4(values[layer_id]) for name, layer_id in g.taps.items()}
    return Tensor4(values[g.output]), taps


def forward_tape(g: ModelGraph, weights: Mapping[str, Tensor4], x: Tensor4) -> Tape:
    values, aux = execute(g, weights, x, keep_all=True)
    return Tape(values=values, aux=aux, output=g.output)


__all__ = [
    "ABLATION_VARIANTS",
    "DEFAULT_FUSION_WIDTH",
    "DEFAULT_STAGES",
    "INPUT",
    "LAYER_KINDS",
    "PYRAMID_FACTORS",
    "AblationConfig",
    "ActivationSpec",
    "AddSpec",
    "AffineSpec",
    "BackboneSchedule",
    "ConvSpec",
    "FusionSpec",
    "GraphBuilder",
    "LayerSpec",
    "ModelGraph",
    "PoolSpec",
    "ResizeSpec",
    "SeparableSpec",
    "Tape",
    "WeightStore",
    "build_backbone",
    "build_bcp_module",
    "build_bcpnet",
    "build_classifier",
    "build_context_pooling",
    "check_weights",
    "describe",
    "forward",
    "forward_tape",
    "infer_shapes",
    "init_weights",
    "layer_weights",
    "make_divisible",
    "param_slots",
    "run_layer",
]
