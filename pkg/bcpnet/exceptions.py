from __future__ import annotations

import functools
import sys
from typing import Any, Callable, Dict, Optional

import orjson

# Process exit codes shared by every command.
EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_USAGE = 2


class BCPNetError(Exception):
    """
    Base engine exception.

    Every error carries the exit code the CLI terminates with, a human
    readable detail line and optional structured data.

    Example:
        raise BCPNetError("bad config", exit_code=2)
        raise ShapeError("axpy operands differ", {"x": (1, 1, 2, 2), "y": (1, 1, 3, 3)})
    """

    exit_code: int = EXIT_NUMERIC
    default_detail: str = "Engine error"

    def __init__(self, detail: Optional[str] = None, data: Optional[Dict[str, Any]] = None, exit_code: Optional[int] = None):
        self.detail = detail or self.default_detail
        self.data = data or {}
        if exit_code is not None:
            self.exit_code = exit_code
        super().__init__(self.detail)

    @property
    def kind(self) -> str:
        return type(self).__name__

    def to_dict(self) -> Dict[str, Any]:
        """Convert exception to a dictionary for JSON output."""
        result: Dict[str, Any] = {
            "error": self.kind,
            "exit_code": self.exit_code,
            "message": self.detail,
        }
        if self.data:
            result["data"] = self.data
        return result

    def to_json(self) -> bytes:
        return orjson.dumps(self.to_dict(), option=orjson.OPT_NON_STR_KEYS)


# ---------------------------------------------------------------------------
# Usage / configuration failures (exit 2)
# ---------------------------------------------------------------------------


class UsageError(BCPNetError):
    exit_code = EXIT_USAGE
    default_detail = "Invalid usage"


class ConfigError(BCPNetError):
    exit_code = EXIT_USAGE
    default_detail = "Invalid configuration"


class InvalidShapeError(BCPNetError):
    """Zero, negative or overflow-sized tensor dimension."""

    exit_code = EXIT_USAGE
    default_detail = "Invalid tensor shape"


class ShapeError(BCPNetError):
    """Operands whose shapes do not agree."""

    exit_code = EXIT_USAGE
    default_detail = "Shape mismatch"


class GeometryError(BCPNetError):
    """Kernel/stride/padding combination yielding a non-positive output size."""

    exit_code = EXIT_USAGE
    default_detail = "Invalid geometry"


class LabelError(BCPNetError):
    exit_code = EXIT_USAGE
    default_detail = "Label out of range"


class WeightStoreError(BCPNetError):
    exit_code = EXIT_USAGE
    default_detail = "Weight store does not match graph"


class FormatError(BCPNetError):
    """Malformed weights file; ``offset`` is the byte position of the fault."""

    exit_code = EXIT_USAGE
    default_detail = "Malformed weights file"

    def __init__(self, detail: Optional[str] = None, offset: int = 0, data: Optional[Dict[str, Any]] = None):
        self.offset = offset
        super().__init__(f"{detail or self.default_detail} (at byte {offset})", {**(data or {}), "offset": offset})


class ImageIOError(BCPNetError):
    exit_code = EXIT_USAGE
    default_detail = "Unreadable or unsupported image"


class ScheduleError(BCPNetError):
    exit_code = EXIT_USAGE
    default_detail = "Iteration outside the learning-rate schedule"


# ---------------------------------------------------------------------------
# Numeric / training failures (exit 1)
# ---------------------------------------------------------------------------


class NumericError(BCPNetError):
    exit_code = EXIT_NUMERIC
    default_detail = "Non-finite value"


class StateError(BCPNetError):
    exit_code = EXIT_NUMERIC
    default_detail = "Required forward state was not retained"


class TrainingError(BCPNetError):
    """Training diverged; ``iteration`` is the step that produced a non-finite loss."""

    exit_code = EXIT_NUMERIC
    default_detail = "Training diverged"

    def __init__(self, detail: Optional[str] = None, iteration: int = -1, data: Optional[Dict[str, Any]] = None):
        self.iteration = iteration
        super().__init__(f"{detail or self.default_detail} at iteration {iteration}", {**(data or {}), "iteration": iteration})


class GradientCheckFailed(BCPNetError):
    exit_code = EXIT_NUMERIC
    default_detail = "Analytic gradient disagrees with finite differences"


class AblationCheckFailed(BCPNetError):
    exit_code = EXIT_NUMERIC
    default_detail = "BCP did not beat the baseline by the required margin"


class BenchmarkBusyError(BCPNetError):
    exit_code = EXIT_NUMERIC
    default_detail = "Another benchmark is running in this process"


def error_boundary(json_output: Callable[[Any], bool] = lambda args: False):
    """
    Decorator to wrap a CLI command with error handling.

    The wrapped ``execute(self, args)`` returns an exit code. Engine errors are
    reported on stderr and converted to their exit code; anything else
    propagates.

    Example:
        class AnalyzeCommand:
            @error_boundary()
            def execute(self, args) -> int:
                ...
    """

    def decorator(func: Callable[..., int]) -> Callable[..., int]:
        @functools.wraps(func)
        def wrapper(self, args, *rest, **kwargs) -> int:
            try:
                return func(self, args, *rest, **kwargs)
            except BCPNetError as e:
                if json_output(args):
                    sys.stderr.write(e.to_json().decode() + "\n")
                else:
                    sys.stderr.write(f"\033[91mError:\033[0m {e.detail}\n")
                return e.exit_code

        return wrapper

    return decorator


__all__ = [
    "EXIT_OK",
    "EXIT_NUMERIC",
    "EXIT_USAGE",
    "BCPNetError",
    "UsageError",
    "ConfigError",
    "InvalidShapeError",
    "ShapeError",
    "GeometryError",
    "LabelError",
    "WeightStoreError",
    "FormatError",
    "ImageIOError",
    "ScheduleError",
    "NumericError",
    "StateError",
    "TrainingError",
    "GradientCheckFailed",
    "AblationCheckFailed",
    "BenchmarkBusyError",
    "error_boundary",
]
