"""BCPNet CLI - complexity analysis, benchmarking, inference and desk-scale training."""

from .main import main

__all__ = ["main"]
