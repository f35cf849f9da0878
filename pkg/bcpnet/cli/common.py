"""Shared helpers for the ``bcpnet`` subcommands."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any, Optional, Tuple

import msgspec
import numpy as np
import orjson

from ..config import RunConfig, load_run_config, parse_resolution
from ..exceptions import UsageError
from ..graph import ModelGraph, WeightStore, check_weights, init_weights
from ..modelio import load_weights, write_text
from ..tensor import Tensor4

logger = logging.getLogger("bcpnet.cli")


def resolution_arg(value: str) -> Tuple[int, int]:
    """argparse type for ``--res HxW``."""
    try:
        return parse_resolution(value)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def seed_list(value: str) -> Tuple[int, ...]:
    """argparse type for ``--seeds 0,1,2``."""
    try:
        seeds = tuple(int(part) for part in value.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {value!r}")
    if len(set(seeds)) != len(seeds):
        raise argparse.ArgumentTypeError(f"duplicate seeds in {value!r}")
    return seeds


def wants_json(args: argparse.Namespace) -> bool:

    return bool(getattr(args, "json_output", False))


def run_config(args: argparse.Namespace) -> RunConfig:
    """Config file plus environment, then ``--seed`` / ``--classes`` overrides."""
    cfg = load_run_config(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "classes", None) is not None:
        overrides["num_classes"] = args.classes
    if overrides:
        cfg = msgspec.structs.replace(cfg, **overrides).validate()
    return cfg


def model_weights(args: argparse.Namespace, g: ModelGraph, seed: int, required: bool = False) -> WeightStore:
    path: Optional[str] = getattr(args, "weights", None)
    if path is None:
        if required:
            raise UsageError("--weights is required")
        return init_weights(g, seed=seed)
    store = load_weights(path)
    check_weights(g, store, strict=True)
    return {name: tensor.astype(g.dtype) for name, tensor in store.items()}


def random_input(h: int, w: int, seed: int, dtype: str = "float32") -> Tensor4:
    return Tensor4(np.random.default_rng(seed).random((1, 3, h, w)).astype(dtype))


def emit(text: str, out: Optional[str] = None) -> None:
    """Write ``text`` to ``out`` (creating parent dirs) or stdout."""
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
        return
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    write_text(out, text)
    logger.info("wrote %s", out)


def emit_json(payload: Any) -> None:
    sys.stdout.write(orjson.dumps(msgspec.to_builtins(payload), option=orjson.OPT_INDENT_2 | orjson.OPT_NON_STR_KEYS).decode() + "\n")


def output_dir(out: Optional[str], default: str) -> Path:
    path = Path(out or default)
    os.makedirs(path, exist_ok=True)
    return path


__all__ = [
    "emit",
    "emit_json",
    "model_weights",
    "output_dir",
    "random_input",
    "resolution_arg",
    "run_config",
    "seed_list",
    "wants_json",
]
