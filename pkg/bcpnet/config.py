# -*- coding: utf-8 -*-
from __future__ import annotations

import os
import typing
from pathlib import Path

import msgspec

from .exceptions import ConfigError
from .graph import DEFAULT_STAGES, AblationConfig, BackboneSchedule, ModelGraph, build_bcpnet
from .train import TrainConfig

"""
Run configuration files.

A run config is a UTF-8 text file of ``key = value`` lines with ``#``
comments. Every key is optional; missing keys take the defaults of
:class:`RunConfig`. Environment variables prefixed ``BCPNET_`` override file
values for known keys.

config = Config("configs/toy.cfg", known=RUN_CONFIG_KEYS, env_prefix="BCPNET_")

SEED = config("seed", cast=int, default=0)
CROP = config("crop", cast=parse_resolution, default=(64, 64))
"""


class undefined:
    pass


T = typing.TypeVar("T")


def parse_resolution(value: typing.Any) -> typing.Tuple[int, int]:
    """``"HxW"`` -> ``(H, W)``."""
    if isinstance(value, (tuple, list)):
        h, w = value
        return int(h), int(w)
    parts = str(value).lower().split("x")
    if len(parts) != 2 or not all(p.strip().isdigit() for p in parts):
        raise ValueError(f"expected HxW, got {value!r}")
    h, w = (int(p) for p in parts)
    if h < 1 or w < 1:
        raise ValueError(f"resolution {value!r} must be positive")
    return h, w


def parse_stages(value: typing.Any) -> typing.Tuple[typing.Tuple[int, int, int], ...]:
    """``"16:1:1,24:2:2"`` -> ``((16, 1, 1), (24, 2, 2))``."""
    if isinstance(value, (tuple, list)):
        return tuple(tuple(int(v) for v in stage) for stage in value)  # type: ignore[return-value]
    text = str(value).strip()
    if not text:
        return ()
    stages = []
    for chunk in text.split(","):
        parts = chunk.strip().split(":")
        if len(parts) != 3:
            raise ValueError(f"stage {chunk!r} is not channels:blocks:stride")
        stages.append(tuple(int(p) for p in parts))
    return tuple(stages)  # type: ignore[return-value]


def format_stages(stages: typing.Sequence[typing.Sequence[int]]) -> str:
    return ",".join(":".join(str(v) for v in stage) for stage in stages)


class Config:
    def __init__(
        self,
        env_file: str | Path | None = None,
        environ: typing.Mapping[str, str] = os.environ,
        env_prefix: str = "",
        known: typing.Optional[typing.Collection[str]] = None,
    ) -> None:
        self.environ = environ
        self.env_prefix = env_prefix
        self.known = known
        self.file_values: dict[str, str] = {}
        if env_file is not None:
            if not os.path.isfile(env_file):
                raise ConfigError(f"Config file '{env_file}' not found.")
            with open(env_file, encoding="utf-8") as input_file:
                self.file_values = self._parse_lines(input_file.read().splitlines(), str(env_file))

    @classmethod
    def from_string(cls, text: str, **kwargs: typing.Any) -> "Config":
        config = cls(**kwargs)
        config.file_values = config._parse_lines(text.splitlines(), "<string>")
        return config

    def __call__(
        self,
        key: str,
        cast: typing.Callable[[typing.Any], typing.Any] | None = None,
        default: typing.Any = undefined,
    ) -> typing.Any:
        return self.get(key, cast, default)

    def get(
        self,
        key: str,
        cast: typing.Callable[[typing.Any], typing.Any] | None = None,
        default: typing.Any = undefined,
    ) -> typing.Any:
        env_key = (self.env_prefix + key).upper() if self.env_prefix else key
        if env_key in self.environ:
            return self._perform_cast(key, self.environ[env_key], cast)
        if key in self.file_values:
            return self._perform_cast(key, self.file_values[key], cast)
        if default is not undefined:
            return self._perform_cast(key, default, cast)
        raise ConfigError(f"Config '{key}' is missing, and has no default.")

    def _parse_lines(self, lines: typing.Iterable[str], source: str) -> dict[str, str]:
        file_values: dict[str, str] = {}
        for lineno, raw in enumerate(lines, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw!r}")
            key, value = line.split("=", 1)
            key = key.strip()
            value = value.split(" #", 1)[0].strip().strip("\"'")
            if self.known is not None and key not in self.known:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            if key in file_values:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
            file_values[key] = value
        return file_values

    def _perform_cast(
        self,
        key: str,
        value: typing.Any,
        cast: typing.Callable[[typing.Any], typing.Any] | None = None,
    ) -> typing.Any:
        if cast is None or value is None:
            return value
        elif cast is bool and isinstance(value, str):
            mapping = {"true": True, "1": True, "false": False, "0": False}
            value = value.lower()
            if value not in mapping:
                raise ConfigError(f"Config '{key}' has value '{value}'. Not a valid bool.")
            return mapping[value]
        try:
            if isinstance(cast, type):
                return msgspec.convert(value, cast, strict=False)
            return cast(value)
        except (TypeError, ValueError, msgspec.ValidationError):
            raise ConfigError(f"Config '{key}' has value '{value}'. Not a valid {getattr(cast, '__name__', cast)}.")


class RunConfig(msgspec.Struct, frozen=True):
    """Flat run configuration; one field per config-file key."""

    num_classes: int = 19
    fusion_width: int = 96
    dtype: str = "float32"
    use_bcp: bool = True
    context_pool_kind: str = "max"
    context_pool_k: int = 3
    stem_channels: int = 16
    stages: typing.Tuple[typing.Tuple[int, int, int], ...] = DEFAULT_STAGES
    expansion: int = 6
    width_mult: float = 0.85
    init_lr: float = 0.1
    power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 1e-05
    total_iter: int = 300
    batch: int = 4
    crop: typing.Tuple[int, int] = (64, 64)
    scale_min: float = 0.5
    scale_max: float = 2.0
    flip_prob: float = 0.5
    seed: int = 0
    eval_samples: int = 32
    log_every: int = 10

    def ablation(self) -> AblationConfig:
        return AblationConfig(self.use_bcp, self.context_pool_kind, self.context_pool_k)  # type: ignore[arg-type]

    def schedule(self) -> BackboneSchedule:
        return BackboneSchedule(self.stem_channels, self.stages, self.expansion, self.width_mult)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            init_lr=self.init_lr,
            power=self.power,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            total_iter=self.total_iter,
            batch=self.batch,
            crop=self.crop,
            scale_range=(self.scale_min, self.scale_max),
            flip_prob=self.flip_prob,
            seed=self.seed,
            eval_samples=self.eval_samples,
            log_every=self.log_every,
        )

    def build_graph(self, num_classes: typing.Optional[int] = None) -> ModelGraph:
        return build_bcpnet(self.ablation(), num_classes or self.num_classes, self.schedule(), self.fusion_width, self.dtype)

    def validate(self) -> "RunConfig":
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        self.ablation()
        self.schedule().validate()
        self.train_config()
        if self.num_classes < 1 or self.fusion_width < 1:
            raise ConfigError("num_classes and fusion_width must be >= 1")
        return self


RUN_CONFIG_KEYS: typing.Tuple[str, ...] = RunConfig.__struct_fields__
_CASTS: dict[str, typing.Callable[[typing.Any], typing.Any]] = {"stages": parse_stages, "crop": parse_resolution}
_TYPES = typing.get_type_hints(RunConfig)


def run_config_from(config: Config) -> RunConfig:
    defaults = RunConfig()
    values = {key: config(key, cast=_CASTS.get(key, _TYPES[key]), default=getattr(defaults, key)) for key in RUN_CONFIG_KEYS}
    return RunConfig(**values).validate()


def parse_run_config(text: str, environ: typing.Mapping[str, str] | None = None) -> RunConfig:
    """Parse config text; environment overrides apply only when ``environ`` is given."""
    return run_config_from(Config.from_string(text, environ=environ or {}, env_prefix="BCPNET_", known=RUN_CONFIG_KEYS))


def load_run_config(path: str | Path | None = None, environ: typing.Mapping[str, str] = os.environ) -> RunConfig:
    """Read ``path`` (defaults only when ``None``) with ``BCPNET_*`` environment overrides."""
    return run_config_from(Config(path, environ=environ, env_prefix="BCPNET_", known=RUN_CONFIG_KEYS))


def _format_value(value: typing.Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_run_config(cfg: RunConfig) -> str:
    lines = []
    for key in RUN_CONFIG_KEYS:
        value = getattr(cfg, key)
        if key == "stages":
            text = format_stages(value)
        elif key == "crop":
            text = f"{value[0]}x{value[1]}"
        else:
            text = _format_value(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


__all__ = [
    "RUN_CONFIG_KEYS",
    "Config",
    "RunConfig",
    "format_run_config",
    "format_stages",
    "load_run_config",
    "parse_resolution",
    "parse_run_config",
    "parse_stages",
]
