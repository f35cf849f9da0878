from .tensor import Tensor4

# Graph construction and execution
from .graph import (
    ABLATION_VARIANTS,
    AblationConfig,
    BackboneSchedule,
    LayerSpec,
    ModelGraph,
    build_bcpnet,
    describe,
    forward,
    forward_tape,
    infer_shapes,
    init_weights,
)

# Complexity accounting
from .complexity import ComplexityReport, ParamCount, count_macs, count_params, resolution_sweep

# Gradients
from .autograd import GradStore, backward, check_graph_gradients, finite_diff_check

# Training
from .train import TrainConfig, TrainResult, run_ablation, train_loop

# Persistence
from .modelio import load_weights, read_image, save_weights, write_label_png

# Benchmark
from .bench import BenchReport, BenchResult, run_bench

# Configuration
from .config import RunConfig, load_run_config, parse_run_config

# Exceptions
from .exceptions import (
    BCPNetError,
    ConfigError,
    FormatError,
    GradientCheckFailed,
    NumericError,
    ShapeError,
    TrainingError,
    UsageError,
)

__version__ = "0.1.0"

__all__ = [
    "ABLATION_VARIANTS",
    "AblationConfig",
    "BackboneSchedule",
    "BCPNetError",
    "BenchReport",
    "BenchResult",
    "ComplexityReport",
    "ConfigError",
    "FormatError",
    "GradStore",
    "GradientCheckFailed",
    "LayerSpec",
    "ModelGraph",
    "NumericError",
    "ParamCount",
    "RunConfig",
    "ShapeError",
    "Tensor4",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "UsageError",
    "backward",
    "build_bcpnet",
    "check_graph_gradients",
    "count_macs",
    "count_params",
    "describe",
    "finite_diff_check",
    "forward",
    "forward_tape",
    "infer_shapes",
    "init_weights",
    "load_run_config",
    "load_weights",
    "parse_run_config",
    "read_image",
    "resolution_sweep",
    "run_ablation",
    "run_bench",
    "save_weights",
    "train_loop",
    "write_label_png",
]
