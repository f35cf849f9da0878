"""
Pytest configuration and fixtures for BCPNet tests.

This module provides:
- A tiny backbone schedule so whole-graph tests run in milliseconds
- Seeded generators
- Tiny float64 graphs (with and without the BCP module) and their weights
"""

import numpy as np
import pytest

from bcpnet.graph import ABLATION_VARIANTS, BackboneSchedule, build_bcpnet, init_weights


# ============================================================================
# Test Configuration
# ============================================================================

TINY_SCHEDULE = BackboneSchedule(
    stem_channels=8,
    stages=((8, 1, 1), (8, 1, 2), (8, 2, 2), (8, 1, 2), (8, 1, 2)),
    expansion=2,
    width_mult=1.0,
)
TINY_FUSION_WIDTH = 8
TINY_CLASSES = 3


def tiny_graph(variant: str = "max3", dtype: str = "float64", num_classes: int = TINY_CLASSES):
    return build_bcpnet(ABLATION_VARIANTS[variant], num_classes, TINY_SCHEDULE, TINY_FUSION_WIDTH, dtype)


# ============================================================================
# Fixtures
# ============================================================================


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_schedule():
    return TINY_SCHEDULE


@pytest.fixture
def tiny_g64():
    """Tiny BCP graph in double precision."""
    return tiny_graph()


@pytest.fixture
def tiny_weights(tiny_g64):
    return init_weights(tiny_g64, seed=0)


@pytest.fixture
def tiny_baseline():
    return tiny_graph("baseline")
