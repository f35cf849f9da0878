"""
Desk-scale training: poly learning rate, SGD with momentum and weight decay,
flip/scale/crop augmentation, a procedural three-class dataset and mIoU.

Example::

    from bcpnet.graph import AblationConfig, build_bcpnet
    from bcpnet.train import TrainConfig, train_loop

    g = build_bcpnet(AblationConfig(), num_classes=3)
    result = train_loop(g, TrainConfig(init_lr=0.01, total_iter=50, seed=7))
    print(result.miou)
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import msgspec
import numpy as np

from .autograd import GradStore, backward
from .complexity import count_params
from .exceptions import ConfigError, LabelError, ScheduleError, ShapeError, TrainingError
from .graph import (
    ABLATION_VARIANTS,
    DEFAULT_FUSION_WIDTH,
    AblationConfig,
    BackboneSchedule,
    ModelGraph,
    WeightStore,
    build_bcpnet,
    forward,
    forward_tape,
    init_weights,
)
from .nnops import IGNORE_INDEX, argmax_labels, bilinear_resize_array, softmax_cross_entropy_array
from .tensor import Tensor4

logger = logging.getLogger("bcpnet.train")

SYNTH_CLASSES = ("background", "circle", "rectangle")
HELDOUT_SEED_OFFSET = 1_000_003
NO_DECAY_SUFFIXES = (".theta", ".sigma", ".shift")
ABLATION_SEEDS = (0, 1, 2)
ABLATION_MIOU_THRESHOLD = 0.6


class TrainConfig(msgspec.Struct, frozen=True):
    init_lr: float = 0.1
    power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 1e-5
    total_iter: int = 300
    batch: int = 4
    crop: Tuple[int, int] = (64, 64)
    scale_range: Tuple[float, float] = (0.5, 2.0)
    flip_prob: float = 0.5
    seed: int = 0
    eval_samples: int = 32
    log_every: int = 10

    def __post_init__(self):
        if not self.init_lr > 0:
            raise ConfigError(f"init_lr must be positive, got {self.init_lr}")
        if self.power < 0:
            raise ConfigError(f"power must be non-negative, got {self.power}")
        if self.total_iter < 1 or self.batch < 1 or self.eval_samples < 1:
            raise ConfigError("total_iter, batch and eval_samples must be >= 1")
        if min(self.crop) < 1:
            raise ConfigError(f"crop must be positive, got {self.crop}")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ConfigError(f"scale_range must satisfy 0 < min <= max, got {self.scale_range}")
        if not 0 <= self.flip_prob <= 1:
            raise ConfigError(f"flip_prob must be in [0, 1], got {self.flip_prob}")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("momentum and weight_decay must be non-negative")


# ============================================================================
# Synthetic data
# ============================================================================


@dataclass(frozen=True)
class SynthSample:
    image: Tensor4
    labels: np.ndarray

    @property
    def size(self) -> Tuple[int, int]:
        return self.labels.shape


def shape_boundary(labels: np.ndarray) -> np.ndarray:
    edge = np.zeros(labels.shape, dtype=bool)
    edge[1:, :] |= labels[1:, :] != labels[:-1, :]
    edge[:-1, :] |= labels[:-1, :] != labels[1:, :]
    edge[:, 1:] |= labels[:, 1:] != labels[:, :-1]
    edge[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    return edge


class SyntheticShapes:
    """
    Procedural segmentation scenes: circles (class 1) and axis-aligned
    rectangles (class 2) on a textured background (class 0).

    Circles are drawn in warm hues and rectangles in cool hues, each with
    per-shape jitter. With ``ignore_ring`` the one-pixel border of every shape
    is labelled :data:`~bcpnet.nnops.IGNORE_INDEX`. Scenes where a class
    covers less than ``min_fraction`` of the pixels are redrawn.
    """

    def __init__(self, size: Tuple[int, int] = (64, 64), ignore_ring: bool = True, min_fraction: float = 0.01, max_tries: int = 100):
        self.size = size
        self.ignore_ring = ignore_ring
        self.min_fraction = min_fraction
        self.max_tries = max_tries

    def render(self, rng: np.random.Generator) -> SynthSample:
        h, w = self.size
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        base = rng.uniform(0.25, 0.55, size=3)
        fy, fx = rng.uniform(0.2, 0.8, size=2)
        texture = 0.08 * np.sin(fy * yy + fx * xx + rng.uniform(0, 2 * np.pi))
        image = base[:, None, None] + texture[None] + rng.normal(0.0, 0.03, size=(3, h, w))
        labels = np.zeros((h, w), dtype=np.int64)
        side = min(h, w)

        shapes = [1] * int(rng.integers(1, 3)) + [2] * int(rng.integers(1, 3))
        rng.shuffle(shapes)
        for cls in shapes:
            if cls == 1:
                r = rng.uniform(0.12, 0.25) * side
                cy, cx = rng.uniform(0, h), rng.uniform(0, w)
                mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
                colour = np.array([rng.uniform(0.75, 1.0), rng.uniform(0.1, 0.45), rng.uniform(0.0, 0.25)])
            else:
                rh, rw = rng.uniform(0.2, 0.45, size=2) * side
                y0, x0 = rng.uniform(-0.1 * h, h - rh), rng.uniform(-0.1 * w, w - rw)
                mask = (yy >= y0) & (yy < y0 + rh) & (xx >= x0) & (xx < x0 + rw)
                colour = np.array([rng.uniform(0.0, 0.25), rng.uniform(0.3, 0.6), rng.uniform(0.75, 1.0)])
            labels[mask] = cls
            image[:, mask] = colour[:, None] + rng.normal(0.0, 0.02, size=(3, int(mask.sum())))
        if self.ignore_ring:
            labels = np.where(shape_boundary(labels), IGNORE_INDEX, labels)
        image = np.clip(image, 0.0, 1.0).astype(np.float32)
        return SynthSample(Tensor4(image[None]), labels)

    def acceptable(self, sample: SynthSample) -> bool:
        total = sample.labels.size
        return all((sample.labels == cls).sum() >= self.min_fraction * total for cls in range(len(SYNTH_CLASSES)))

    def sample(self, rng: np.random.Generator) -> SynthSample:
        for _ in range(self.max_tries):
            candidate = self.render(rng)
            if self.acceptable(candidate):
                return candidate
        raise ConfigError(f"could not draw a scene with every class above {self.min_fraction:.0%} in {self.max_tries} tries")

    def stream(self, seed: int | np.random.SeedSequence) -> Iterator[SynthSample]:
        rng = np.random.default_rng(seed)
        while True:
            yield self.sample(rng)

    def heldout(self, count: int, seed: int) -> List[SynthSample]:
        rng = np.random.default_rng(seed + HELDOUT_SEED_OFFSET)
        return [self.sample(rng) for _ in range(count)]


# ============================================================================
# Schedule and optimizer
# ============================================================================


def poly_lr(cfg: TrainConfig, iteration: int) -> float:
    if not 0 <= iteration <= cfg.total_iter:
        raise ScheduleError(f"iteration {iteration} outside [0, {cfg.total_iter}]")
    return cfg.init_lr * (1.0 - iteration / cfg.total_iter) ** cfg.power


def decays(name: str) -> bool:
    return not name.endswith(NO_DECAY_SUFFIXES)


def sgd_step(
    weights: Mapping[str, Tensor4],
    grads: GradStore | Mapping[str, Tensor4],
    velocity: Mapping[str, Tensor4],
    lr: float,
    cfg: TrainConfig,
) -> Tuple[WeightStore, WeightStore]:
    """``v <- momentum * v + g + wd * w``; ``w <- w - lr * v``. Returns ``(weights, velocity)``."""
    new_w: WeightStore = {}
    new_v: WeightStore = {}
    for name, w in weights.items():
        g = grads[name]
        v = velocity.get(name)
        if g.shape != w.shape or (v is not None and v.shape != w.shape):
            raise ShapeError(f"slot {name!r}: weight {w.shape}, grad {g.shape}, velocity {None if v is None else v.shape}")
        dt = w.dtype.type
        step = dt(cfg.momentum) * v.data + g.data if v is not None else g.data.astype(w.dtype, copy=True)
        if decays(name) and cfg.weight_decay:
            step = step + dt(cfg.weight_decay) * w.data
        new_v[name] = Tensor4(np.asarray(step, dtype=w.dtype))
        new_w[name] = Tensor4(w.data - dt(lr) * new_v[name].data)
    return new_w, new_v


# ============================================================================
# Augmentation
# ============================================================================


def nearest_resize_labels(labels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = labels.shape
    rows = np.minimum(((np.arange(out_h) + 0.5) * (h / out_h)).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * (w / out_w)).astype(np.int64), w - 1)
    return labels[rows[:, None], cols[None, :]]


def augment(
    sample: SynthSample,
    cfg: TrainConfig,
    rng: np.random.Generator,
    flip: Optional[bool] = None,
    scale: Optional[float] = None,
) -> SynthSample:
    """
    Random horizontal flip, random rescale, random crop to ``cfg.crop``.

    ``flip`` and ``scale`` override the random draws. Regions outside the
    rescaled image are padded with zero pixels and the ignore label.
    """
    draw_flip = rng.random() < cfg.flip_prob
    draw_scale = rng.uniform(*cfg.scale_range)
    flip = draw_flip if flip is None else flip
    scale = draw_scale if scale is None else scale

    image = sample.image.data
    labels = sample.labels
    if flip:
        image = image[..., ::-1]
        labels = labels[:, ::-1]
    h, w = labels.shape
    sh, sw = max(1, int(round(h * scale))), max(1, int(round(w * scale)))
    if (sh, sw) != (h, w):
        image = bilinear_resize_array(np.ascontiguousarray(image), sh, sw)
        labels = nearest_resize_labels(labels, sh, sw)

    ch, cw = cfg.crop
    ph, pw = max(ch, sh), max(cw, sw)
    if (ph, pw) != (sh, sw):
        canvas = np.zeros((1, 3, ph, pw), dtype=image.dtype)
        canvas[:, :, :sh, :sw] = image
        lab = np.full((ph, pw), IGNORE_INDEX, dtype=labels.dtype)
        lab[:sh, :sw] = labels
        image, labels = canvas, lab
    y0 = int(rng.integers(0, ph - ch + 1))
    x0 = int(rng.integers(0, pw - cw + 1))
    image = image[:, :, y0 : y0 + ch, x0 : x0 + cw]
    labels = labels[y0 : y0 + ch, x0 : x0 + cw]
    return SynthSample(Tensor4(np.ascontiguousarray(image)), np.ascontiguousarray(labels))


# ============================================================================
# Metric
# ============================================================================


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int, ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    labelled = gt != ignore_index
    for name, values in (("prediction", pred[labelled]), ("ground truth", gt[labelled])):
        bad = (values < 0) | (values >= num_classes)
        if np.any(bad):
            raise LabelError(f"{name} classes outside [0, {num_classes}): {np.unique(values[bad])[:8].tolist()}")
    idx = gt[labelled].astype(np.int64) * num_classes + pred[labelled].astype(np.int64)
    return np.bincount(idx, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def iou_from_confusion(conf: np.ndarray) -> Tuple[List[float], float]:
    tp = np.diag(conf).astype(np.float64)
    union = conf.sum(axis=0) + conf.sum(axis=1) - tp
    per_class = [float(t / u) if u > 0 else float("nan") for t, u in zip(tp, union)]
    present = [v for v, u in zip(per_class, union) if u > 0]
    return per_class, (float(np.mean(present)) if present else 0.0)


def miou(pred: np.ndarray, gt: np.ndarray, num_classes: int, ignore_index: int = IGNORE_INDEX) -> Tuple[List[float], float]:
    """Per-class IoU (NaN where a class never occurs) and their mean over occurring classes."""
    return iou_from_confusion(confusion_matrix(pred, gt, num_classes, ignore_index))


# ============================================================================
# Loop
# ============================================================================


@dataclass
class TrainResult:
    weights: WeightStore
    history: List[Tuple[int, float, float]]
    per_class_iou: List[float]
    miou: float
    params: int = 0


def stack(samples: Sequence[SynthSample]) -> Tuple[Tensor4, np.ndarray]:
    image = np.concatenate([s.image.data for s in samples], axis=0)
    labels = np.stack([s.labels for s in samples], axis=0)
    return Tensor4(image), labels


def evaluate(g: ModelGraph, weights: Mapping[str, Tensor4], samples: Sequence[SynthSample]) -> Tuple[List[float], float]:
    conf = np.zeros((g.num_classes, g.num_classes), dtype=np.int64)
    for sample in samples:
        logits, _ = forward(g, weights, sample.image)
        conf += confusion_matrix(argmax_labels(logits)[0], sample.labels, g.num_classes)
    return iou_from_confusion(conf)


def train_loop(
    g: ModelGraph,
    cfg: TrainConfig,
    dataset: Optional[SyntheticShapes] = None,
    weights: Optional[WeightStore] = None,
) -> TrainResult:
    """
    Train ``g`` for ``cfg.total_iter`` iterations and evaluate on held-out scenes.

    Deterministic given ``cfg.seed``: weights, scene stream, augmentation and
    held-out set all derive from it.
    """
    dataset = dataset or SyntheticShapes(size=cfg.crop)
    if g.num_classes < len(SYNTH_CLASSES):
        raise ConfigError(f"synthetic scenes have {len(SYNTH_CLASSES)} classes, graph predicts {g.num_classes}")
    init_seq, data_seq, aug_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    rng = np.random.default_rng(aug_seq)
    weights = dict(weights) if weights is not None else init_weights(g, rng=np.random.default_rng(init_seq))
    velocity: WeightStore = {}
    stream = dataset.stream(data_seq)
    history: List[Tuple[int, float, float]] = []

    for it in range(cfg.total_iter):
        lr = poly_lr(cfg, it)
        x, labels = stack([augment(next(stream), cfg, rng) for _ in range(cfg.batch)])
        tape = forward_tape(g, weights, x)
        loss, grad = softmax_cross_entropy_array(tape.values[g.output], labels)
        if not math.isfinite(loss):
            raise TrainingError("loss is not finite", it, {"lr": lr})
        grads = backward(g, weights, x, Tensor4(grad), tape)
        weights, velocity = sgd_step(weights, grads, velocity, lr, cfg)
        history.append((it, loss, lr))
        if cfg.log_every and it % cfg.log_every == 0:
            logger.info("iter %d lr %.6f loss %.4f", it, lr, loss)

    per_class, mean = evaluate(g, weights, dataset.heldout(cfg.eval_samples, cfg.seed))
    logger.info("final mIoU %.4f over %d held-out scenes", mean, cfg.eval_samples)
    return TrainResult(weights, history, per_class, mean, count_params(g).total)


# ============================================================================
# Ablation
# ============================================================================


class AblationRow(msgspec.Struct, frozen=True):
    variant: str
    params: int
    final_miou: float


def crop_row_config(cfg: TrainConfig) -> TrainConfig:
    """The larger-crop row: crop enlarged by 4/3."""
    return msgspec.structs.replace(cfg, crop=(round(cfg.crop[0] * 4 / 3), round(cfg.crop[1] * 4 / 3)))


def run_ablation(
    cfg: TrainConfig,
    variants: Mapping[str, AblationConfig] = ABLATION_VARIANTS,
    num_classes: int = len(SYNTH_CLASSES),
    schedule: BackboneSchedule = BackboneSchedule(),
    fusion_width: int = DEFAULT_FUSION_WIDTH,
    with_crop_row: bool = False,
) -> List[AblationRow]:
    runs = [(name, variant, cfg) for name, variant in variants.items()]
    if with_crop_row:
        runs.append(("max3_crop", ABLATION_VARIANTS["max3"], crop_row_config(cfg)))
    rows = []
    for name, variant, run_cfg in runs:
        g = build_bcpnet(variant, num_classes, schedule, fusion_width)
        logger.info("ablation %s: %d params", name, count_params(g).total)
        result = train_loop(g, run_cfg)
        rows.append(AblationRow(name, result.params, result.miou))
    return rows


class SeedSweepRow(msgspec.Struct, frozen=True):
    """Final mIoU of one variant over several seeds."""

    variant: str
    params: int
    seeds: Tuple[int, ...]
    mious: Tuple[float, ...]

    @property
    def median(self) -> float:
        return float(np.median(self.mious))


class AblationVerdict(msgspec.Struct, frozen=True):
    with_bcp: float
    without_bcp: float
    threshold: float

    @property
    def gain(self) -> float:
        return self.with_bcp - self.without_bcp

    @property
    def passed(self) -> bool:
        return self.with_bcp > self.without_bcp and self.with_bcp >= self.threshold

    def describe(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status}: median mIoU with BCP {self.with_bcp:.4f}, without {self.without_bcp:.4f} "
            f"(gain {self.gain:+.4f}, threshold {self.threshold:.2f})"
        )


def run_seed_sweep(
    cfg: TrainConfig,
    seeds: Sequence[int] = ABLATION_SEEDS,
    variants: Mapping[str, AblationConfig] = ABLATION_VARIANTS,
    num_classes: int = len(SYNTH_CLASSES),
    schedule: BackboneSchedule = BackboneSchedule(),
    fusion_width: int = DEFAULT_FUSION_WIDTH,
) -> List[SeedSweepRow]:
    """Train every variant once per seed under an otherwise identical schedule."""
    if not seeds:
        raise ConfigError("seed sweep needs at least one seed")
    rows = []
    for name, variant in variants.items():
        g = build_bcpnet(variant, num_classes, schedule, fusion_width)
        mious = []
        for seed in seeds:
            result = train_loop(g, msgspec.structs.replace(cfg, seed=seed))
            logger.info("ablation %s seed %d: mIoU %.4f", name, seed, result.miou)
            mious.append(result.miou)
        rows.append(SeedSweepRow(name, count_params(g).total, tuple(seeds), tuple(mious)))
    return rows


def judge_ablation(
    rows: Sequence[SeedSweepRow],
    threshold: float = ABLATION_MIOU_THRESHOLD,
    with_bcp: str = "max3",
    without_bcp: str = "baseline",
) -> AblationVerdict:
    """BCP must beat the baseline on median mIoU and reach ``threshold``."""
    by_name = {row.variant: row for row in rows}
    missing = [name for name in (with_bcp, without_bcp) if name not in by_name]
    if missing:
        raise ConfigError(f"ablation verdict needs variants {missing}")
    return AblationVerdict(by_name[with_bcp].median, by_name[without_bcp].median, threshold)



# ============================================================================
# CSV
# ============================================================================


def _csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def history_to_csv(history: Sequence[Tuple[int, float, float]]) -> str:
    return _csv(["iter", "lr", "loss"], ((it, repr(lr), repr(loss)) for it, loss, lr in history))


def eval_to_csv(per_class: Sequence[float], mean: float, names: Optional[Sequence[str]] = None) -> str:
    names = names if names is not None and len(names) == len(per_class) else [str(i) for i in range(len(per_class))]
    rows = [(n, repr(v)) for n, v in zip(names, per_class)]
    rows.append(("mean", repr(mean)))
    return _csv(["class", "iou"], rows)


def ablation_to_csv(rows: Sequence[AblationRow]) -> str:
    return _csv(["variant", "params", "final_miou"], ((r.variant, r.params, repr(r.final_miou)) for r in rows))


def seed_sweep_to_csv(rows: Sequence[SeedSweepRow]) -> str:
    """One row per variant and seed, then a ``median`` row per variant."""
    out = []
    for r in rows:
        out.extend((r.variant, r.params, seed, repr(m)) for seed, m in zip(r.seeds, r.mious))
        out.append((r.variant, r.params, "median", repr(r.median)))
    return _csv(["variant", "params", "seed", "final_miou"], out)



__all__ = [
    "ABLATION_MIOU_THRESHOLD",
    "ABLATION_SEEDS",
    "SYNTH_CLASSES",
    "AblationRow",
    "AblationVerdict",
    "SeedSweepRow",
    "SynthSample",
    "SyntheticShapes",
    "TrainConfig",
    "TrainResult",
    "ablation_to_csv",
    "augment",
    "confusion_matrix",
    "crop_row_config",
    "decays",
    "eval_to_csv",
    "evaluate",
    "history_to_csv",
    "iou_from_confusion",
    "judge_ablation",
    "miou",
    "nearest_resize_labels",
    "poly_lr",
    "run_ablation",
    "run_seed_sweep",
    "seed_sweep_to_csv",
    "sgd_step",
    "train_loop",
]
