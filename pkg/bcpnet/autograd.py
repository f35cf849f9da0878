"""
Manual backward pass over a :class:`~bcpnet.graph.ModelGraph` and
finite-difference verification.

Each layer kind has one backward kernel registered in :data:`BACKWARD`; the
driver walks the tape in reverse topological order and accumulates
activation gradients for layers with several consumers. Layers with no path
to the logits (the finest level of the last top-down path) receive zero
parameter gradients.

Example::

    from bcpnet.autograd import backward, check_graph_gradients
    from bcpnet.graph import build_bcpnet, init_weights
    from bcpnet.tensor import create

    g = build_bcpnet(dtype="float64")
    w = init_weights(g, seed=0)
    x = create((1, 3, 64, 64), lambda n, c, h, w: (h * w % 7) / 7.0, "float64")
    report = check_graph_gradients(g, w, x)
    report.raise_for(1e-4)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import msgspec
import numpy as np

from .exceptions import GradientCheckFailed, NumericError, ShapeError, StateError, UsageError
from .graph import (
    INPUT,
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
    Tape,
    WeightStore,
    forward_tape,
    layer_weights,
    param_slots,
)
from .nnops import pad_array, resize_matrix, valid_counts, window_slice
from .tensor import Tensor4

logger = logging.getLogger("bcpnet.autograd")

DEFAULT_EPS = 1e-5


# ============================================================================
# Array kernels
# ============================================================================


def conv2d_backward_array(
    x: np.ndarray,
    weight: np.ndarray,
    dout: np.ndarray,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
    has_bias: bool = False,
) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """Return ``(dx, dweight, dbias)``; ``dbias`` is ``None`` without bias."""
    n, c_in, h, w = x.shape
    c_out, cpg, k, _ = weight.shape
    db = dout.sum(axis=(0, 2, 3)).reshape(1, c_out, 1, 1) if has_bias else None

    if k == 1 and stride == 1 and padding == 0 and groups == 1:
        d2 = dout.reshape(n, c_out, h * w)
        x2 = x.reshape(n, c_in, h * w)
        dw = np.matmul(d2, x2.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        dx = np.matmul(weight.reshape(c_out, c_in).T, d2).reshape(x.shape)
        return dx, dw, db

    oh, ow = dout.shape[2:]
    xp = pad_array(x, padding)
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(weight, dtype=np.result_type(weight.dtype, dout.dtype))
    depthwise = groups == c_in and c_out == c_in and cpg == 1
    opg = c_out // groups
    for ki in range(k):
        rows = window_slice(ki, oh, stride)
        for kj in range(k):
            cols = window_slice(kj, ow, stride)
            xs = xp[:, :, rows, cols]
            if depthwise:
                dw[:, 0, ki, kj] = (dout * xs).sum(axis=(0, 2, 3))
                dxp[:, :, rows, cols] += weight[:, 0, ki, kj][None, :, None, None] * dout
            elif groups == 1:
                dw[:, :, ki, kj] = np.tensordot(dout, xs, axes=([0, 2, 3], [0, 2, 3]))
                dxp[:, :, rows, cols] += np.tensordot(weight[:, :, ki, kj], dout, axes=([0], [1])).transpose(1, 0, 2, 3)
            else:
                for grp in range(groups):
                    o_sl = slice(grp * opg, (grp + 1) * opg)
                    i_sl = slice(grp * cpg, (grp + 1) * cpg)
                    dw[o_sl, :, ki, kj] = np.tensordot(dout[:, o_sl], xs[:, i_sl], axes=([0, 2, 3], [0, 2, 3]))
                    dxp[:, i_sl, rows, cols] += np.tensordot(weight[o_sl, :, ki, kj], dout[:, o_sl], axes=([0], [1])).transpose(1, 0, 2, 3)
    dx = dxp[:, :, padding : padding + h, padding : padding + w]
    return np.ascontiguousarray(dx), dw, db


def pool2d_backward_array(
    x_shape: Tuple[int, int, int, int],
    dout: np.ndarray,
    kind: str,
    k: int,
    stride: int,
    padding: int,
    routing: Optional[np.ndarray] = None,
) -> np.ndarray:
    n, c, h, w = x_shape
    oh, ow = dout.shape[2:]
    dxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=dout.dtype)
    if kind == "max":
        if routing is None:
            raise StateError("max-pool backward needs the forward routing indices")
        for ki in range(k):
            rows = window_slice(ki, oh, stride)
            for kj in range(k):
                dxp[:, :, rows, window_slice(kj, ow, stride)] += np.where(routing == ki * k + kj, dout, 0)
    else:
        counts = np.outer(valid_counts(h, k, stride, padding, oh), valid_counts(w, k, stride, padding, ow))
        share = dout / counts.astype(dout.dtype)
        for ki in range(k):
            rows = window_slice(ki, oh, stride)
            for kj in range(k):
                dxp[:, :, rows, window_slice(kj, ow, stride)] += share
    return np.ascontiguousarray(dxp[:, :, padding : padding + h, padding : padding + w])


def bilinear_resize_backward_array(in_hw: Tuple[int, int], dout: np.ndarray) -> np.ndarray:
    h, w = in_hw
    oh, ow = dout.shape[2:]
    if (oh, ow) == (h, w):
        return dout.copy()
    ry = resize_matrix(h, oh, dout.dtype)
    rx = resize_matrix(w, ow, dout.dtype)
    return np.matmul(np.matmul(ry.T, dout), rx)


def weighted_fusion_backward_array(
    s: np.ndarray, c: np.ndarray, theta: float, sigma: float, dout: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, float, float]:
    """Return ``(ds, dc, dtheta, dsigma)``."""
    dt = dout.dtype.type
    return dt(theta) * dout, dt(sigma) * dout, float((s * dout).sum()), float((c * dout).sum())


def activation_backward_array(x: np.ndarray, dout: np.ndarray, fn: str) -> np.ndarray:
    if fn == "relu":
        return dout * (x > 0)
    return dout * ((x > 0) & (x < 6))


# ============================================================================
# Per-kind backward rules
# ============================================================================

Rule = Callable[[LayerSpec, np.ndarray, List[np.ndarray], Dict[str, np.ndarray], object], Tuple[List[np.ndarray], Dict[str, np.ndarray]]]


def _conv_back(layer, dout, args, p, aux):
    spec: ConvSpec = layer.params
    dx, dw, db = conv2d_backward_array(args[0], p["weight"], dout, spec.stride, spec.padding, spec.groups, spec.bias)
    grads = {"weight": dw}
    if db is not None:
        grads["bias"] = db
    return [dx], grads


def _separable_back(layer, dout, args, p, aux):
    spec: SeparableSpec = layer.params
    if aux is None:
        raise StateError(f"separable layer {layer.id!r} has no retained depthwise output")
    dmid, dpw, dpb = conv2d_backward_array(aux, p["pw.weight"], dout, has_bias=spec.bias)
    dx, ddw, _ = conv2d_backward_array(args[0], p["dw.weight"], dmid, spec.stride, spec.k // 2, groups=spec.c_in)
    grads = {"dw.weight": ddw, "pw.weight": dpw}
    if dpb is not None:
        grads["pw.bias"] = dpb
    return [dx], grads


def _pool_back(layer, dout, args, p, aux):
    spec: PoolSpec = layer.params
    if spec.kind == "max" and aux is None:
        raise StateError(f"max-pool layer {layer.id!r} has no retained routing")
    return [pool2d_backward_array(args[0].shape, dout, spec.kind, spec.k, spec.stride, spec.padding, aux)], {}


def _resize_back(layer, dout, args, p, aux):
    return [bilinear_resize_backward_array(args[0].shape[2:], dout)], {}


def _fusion_back(layer, dout, args, p, aux):
    ds, dc, dtheta, dsigma = weighted_fusion_backward_array(args[0], args[1], p["theta"].item(), p["sigma"].item(), dout)
    return [ds, dc], {"theta": np.full((1, 1, 1, 1), dtheta, dout.dtype), "sigma": np.full((1, 1, 1, 1), dsigma, dout.dtype)}


def _affine_back(layer, dout, args, p, aux):
    return [dout * p["scale"]], {
        "scale": (dout * args[0]).sum(axis=(0, 2, 3)).reshape(p["scale"].shape),
        "shift": dout.sum(axis=(0, 2, 3)).reshape(p["shift"].shape),
    }


def _activation_back(layer, dout, args, p, aux):
    return [activation_backward_array(args[0], dout, layer.params.fn)], {}


def _add_back(layer, dout, args, p, aux):
    return [dout, dout], {}


BACKWARD: Dict[type, Rule] = {
    ConvSpec: _conv_back,
    SeparableSpec: _separable_back,
    PoolSpec: _pool_back,
    ResizeSpec: _resize_back,
    FusionSpec: _fusion_back,
    AffineSpec: _affine_back,
    ActivationSpec: _activation_back,
    AddSpec: _add_back,
}


# ============================================================================
# Driver
# ============================================================================


@dataclass
class GradStore:
    """Gradient per weight slot plus the gradient of the graph input."""

    params: Dict[str, Tensor4]
    input: Tensor4

    def __getitem__(self, name: str) -> Tensor4:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def global_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(t.data.astype(np.float64) ** 2)) for t in self.params.values()))


def backward(
    g: ModelGraph,
    weights: Mapping[str, Tensor4],
    x: Tensor4,
    upstream: Tensor4,
    tape: Optional[Tape] = None,
) -> GradStore:
    """
    Gradients of ``sum(upstream * logits)`` w.r.t. every weight slot and the input.

    ``tape`` is the result of :func:`~bcpnet.graph.forward_tape` on the same
    weights and input; it is recomputed when omitted.
    """
    if tape is None:
        tape = forward_tape(g, weights, x)
    logits = tape.get(g.output)
    if upstream.shape != logits.shape:
        raise ShapeError(f"upstream {upstream.shape} does not match logits {logits.shape}")

    act_grads: Dict[str, np.ndarray] = {g.output: upstream.data.astype(logits.dtype, copy=False)}
    param_grads: Dict[str, np.ndarray] = {}
    for layer in reversed(g.layers):
        dout = act_grads.pop(layer.id, None)
        if dout is None:
            continue
        args = [tape.get(src) for src in layer.inputs]
        d_inputs, d_params = BACKWARD[type(layer.params)](layer, dout, args, layer_weights(layer, weights), tape.aux.get(layer.id))
        for slot, grad in d_params.items():
            param_grads[f"{layer.id}.{slot}"] = grad
        for src, grad in zip(layer.inputs, d_inputs):
            if src in act_grads:
                act_grads[src] = act_grads[src] + grad
            else:
                act_grads[src] = grad

    out: Dict[str, Tensor4] = {}
    for name, shape in param_slots(g).items():
        grad = param_grads.get(name)
        out[name] = Tensor4(np.zeros(shape, dtype=logits.dtype) if grad is None else grad.astype(logits.dtype, copy=False))
    d_input = act_grads.get(INPUT)
    return GradStore(out, Tensor4(np.zeros(x.shape, dtype=logits.dtype) if d_input is None else d_input))


# ============================================================================
# Finite differences
# ============================================================================


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))


def central_difference(f: Callable[[np.ndarray], float], w: np.ndarray, index: int, eps: float) -> float:
    wp = w.copy()
    wp.flat[index] += eps
    fp = f(wp)
    wm = w.copy()
    wm.flat[index] -= eps
    fm = f(wm)
    if not (math.isfinite(fp) and math.isfinite(fm)):
        raise NumericError(f"objective is not finite at coordinate {index}")
    return (fp - fm) / (2.0 * eps)


def finite_diff_check(
    f: Callable[[np.ndarray], float],
    w: np.ndarray,
    analytic_grad: np.ndarray,
    eps: float = DEFAULT_EPS,
    coords: Optional[Iterable[int]] = None,
) -> float:
    """
    Max relative error between ``analytic_grad`` and central differences of ``f``.

    ``coords`` restricts the check to the given flat indices; all coordinates
    are checked otherwise.
    """
    if eps <= 0:
        raise UsageError(f"eps must be positive, got {eps}")
    w = np.asarray(w)
    if w.dtype != np.float64:
        raise NumericError(f"finite differences need float64 parameters, got {w.dtype}")
    analytic = np.asarray(analytic_grad, dtype=np.float64)
    if analytic.shape != w.shape:
        raise ShapeError(f"analytic gradient {analytic.shape} does not match parameters {w.shape}")
    indices = range(w.size) if coords is None else coords
    worst = 0.0
    for i in indices:
        worst = max(worst, relative_error(float(analytic.flat[i]), central_difference(f, w, int(i), eps)))
    return worst


class SlotCheck(msgspec.Struct, frozen=True):
    """Worst relative error over the checked coordinates; infinite when none could be checked."""

    name: str
    coords: Tuple[int, ...]
    max_rel_error: float
    skipped: int = 0


class GradcheckReport(msgspec.Struct, frozen=True):
    slots: Tuple[SlotCheck, ...]
    eps: float = DEFAULT_EPS

    @property
    def max_rel_error(self) -> float:
        return max((s.max_rel_error for s in self.slots), default=0.0)

    @property
    def skipped(self) -> int:
        return sum(s.skipped for s in self.slots)

    def failures(self, tol: float) -> List[SlotCheck]:
        return [s for s in self.slots if s.max_rel_error > tol]

    def raise_for(self, tol: float) -> None:
        bad = self.failures(tol)
        if bad:
            worst = max(bad, key=lambda s: s.max_rel_error)
            raise GradientCheckFailed(
                f"{len(bad)} slot(s) exceed {tol:g}; worst {worst.name} at {worst.max_rel_error:.3e}",
                {"failed": [s.name for s in bad]},
            )


def kink_signature(g: ModelGraph, tape: Tape) -> List[np.ndarray]:
    """Activation masks and max-pool routings of one forward pass."""
    sig = []
    for layer in g.layers:
        spec = layer.params
        if isinstance(spec, ActivationSpec):
            x = tape.values[layer.inputs[0]]
            sig.append((x > 0) if spec.fn == "relu" else ((x > 0) & (x < 6)))
        elif isinstance(spec, PoolSpec) and spec.kind == "max":
            sig.append(tape.aux[layer.id])
    return sig


def same_signature(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def check_graph_gradients(
    g: ModelGraph,
    weights: Mapping[str, Tensor4],
    x: Tensor4,
    eps: float = DEFAULT_EPS,
    per_slot: int = 1,
    seed: int = 0,
    slots: Optional[Sequence[str]] = None,
    candidates: int = 32,
) -> GradcheckReport:
    """
    Compare :func:`backward` with central differences on every weight slot.

    The objective is ``sum(R * logits)`` for a fixed random ``R``. Per slot,
    ``per_slot`` coordinates are sampled (favouring ones with a non-negligible
    analytic gradient); a coordinate whose perturbation flips an activation
    mask or a max-pool routing is skipped and replaced.
    """
    if eps <= 0:
        raise UsageError(f"eps must be positive, got {eps}")
    g = g.with_dtype("float64")
    store: WeightStore = {k: v.astype("float64") for k, v in weights.items()}
    x = x.astype("float64")
    rng = np.random.default_rng(seed)

    base = forward_tape(g, store, x)
    projection = rng.standard_normal(base.logits.shape)
    analytic = backward(g, store, x, Tensor4(projection), base)
    base_sig = kink_signature(g, base)

    def evaluate_at(name: str, value: np.ndarray) -> Tuple[float, bool]:
        trial = dict(store)
        trial[name] = Tensor4(value)
        tape = forward_tape(g, trial, x)
        return float(np.sum(projection * tape.values[g.output])), same_signature(base_sig, kink_signature(g, tape))

    results = []
    for name in slots or list(param_slots(g)):
        w = store[name].data
        grad = analytic[name].data
        order = rng.permutation(w.size)[:candidates]
        floor = 1e-3 * float(np.abs(grad).max())
        order = sorted(order, key=lambda i: abs(grad.flat[i]) < floor)
        accepted: List[int] = []
        worst = 0.0
        skipped = 0
        for idx in order:
            if len(accepted) == per_slot:
                break
            idx = int(idx)
            plus = w.copy()
            plus.flat[idx] += eps
            minus = w.copy()
            minus.flat[idx] -= eps
            fp, ok_p = evaluate_at(name, plus)
            fm, ok_m = evaluate_at(name, minus)
            if not (ok_p and ok_m):
                skipped += 1
                logger.debug("skipping %s[%d]: perturbation crosses a kink", name, idx)
                continue
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericError(f"objective is not finite while probing {name}[{idx}]")
            worst = max(worst, relative_error(float(grad.flat[idx]), (fp - fm) / (2.0 * eps)))
            accepted.append(idx)
        if not accepted:
            logger.warning("no kink-free coordinate found for %s", name)
            worst = math.inf
        results.append(SlotCheck(name, tuple(accepted), worst, skipped))
    report = GradcheckReport(slots=tuple(results), eps=eps)
    logger.info("gradcheck: %d slots, max rel error %.3e, %d skipped coordinates", len(results), report.max_rel_error, report.skipped)
    return report


__all__ = [
    "BACKWARD",
    "DEFAULT_EPS",
    "GradStore",
    "GradcheckReport",
    "SlotCheck",
    "activation_backward_array",
    "backward",
    "bilinear_resize_backward_array",
    "central_difference",
    "check_graph_gradients",
    "conv2d_backward_array",
    "finite_diff_check",
    "kink_signature",
    "pool2d_backward_array",
    "relative_error",
    "weighted_fusion_backward_array",
]
