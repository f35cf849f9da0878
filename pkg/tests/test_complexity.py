"""
Tests for analytic parameter and MAC accounting.

These tests verify:
- Parameter totals of the default model and its parts
- Layer MAC formulas against naive-loop multiplication counts
- Exact resolution scaling of MACs
- CSV and human table layout
- Size categories
"""

import numpy as np
import pytest

from bcpnet.complexity import (
    PUBLISHED_PARAMS,
    PUBLISHED_FLOPS_G,
    FLOPS_RESOLUTIONS,
    count_macs,
    count_params,
    layer_cost,
    macs_by_factor,
    resolution_sweep,
    size_category,
)
from bcpnet.exceptions import GeometryError
from bcpnet.graph import ABLATION_VARIANTS, INPUT, ConvSpec, FusionSpec, LayerSpec, PoolSpec, SeparableSpec, build_bcpnet

from .oracles import naive_conv2d

BACKBONE_PARAMS = 424_944
BCP_PARAMS = 191_070
HEAD_PARAMS = 96 * 19 + 19
TOTAL_PARAMS = BACKBONE_PARAMS + BCP_PARAMS + HEAD_PARAMS


@pytest.fixture(scope="module")
def default_graph():
    return build_bcpnet()


# ============================================================================
# Test: parameters
# ============================================================================


class TestParams:
    def test_exact_totals(self, default_graph):
        params = count_params(default_graph)
        assert params.total == TOTAL_PARAMS == 617_857
        assert params.backbone == BACKBONE_PARAMS
        assert params.bcp == BCP_PARAMS
        assert params.head == HEAD_PARAMS

    def test_within_published_bands(self, default_graph):
        params = count_params(default_graph)
        assert abs(params.total - PUBLISHED_PARAMS["total"]) <= 0.10 * PUBLISHED_PARAMS["total"]
        assert abs(params.backbone - PUBLISHED_PARAMS["backbone"]) <= 0.15 * PUBLISHED_PARAMS["backbone"]
        assert abs(params.bcp - PUBLISHED_PARAMS["bcp"]) <= 0.15 * PUBLISHED_PARAMS["bcp"]

    def test_baseline_drops_bcp(self):
        params = count_params(build_bcpnet(ABLATION_VARIANTS["baseline"]))
        assert params.bcp == 0
        assert params.total == BACKBONE_PARAMS + 32 * 19 + 19

    @pytest.mark.parametrize("variant", ["max3", "avg3", "max5"])
    def test_pooling_variants_share_parameter_count(self, variant):
        assert count_params(build_bcpnet(ABLATION_VARIANTS[variant])).total == TOTAL_PARAMS

    def test_separable_formula(self):
        layer = LayerSpec("sep", SeparableSpec(64, 64, 3, bias=False), (INPUT,))
        assert sum(int(np.prod(s)) for s in layer.params.slots().values()) == 576 + 4096

    def test_report_params_match_count(self, default_graph):
        assert count_macs(default_graph, 64, 64).params == TOTAL_PARAMS


# ============================================================================
# Test: MAC formulas
# ============================================================================


class TestLayerCost:
    def test_conv_matches_naive_counter(self, rng):
        for _ in range(100):
            groups = int(rng.choice([1, 2, 4]))
            c_in = groups * int(rng.integers(1, 3))
            c_out = groups * int(rng.integers(1, 3))
            k = int(rng.choice([1, 3, 5]))
            stride = int(rng.integers(1, 3))
            padding = int(rng.integers(0, k // 2 + 1))
            h, w = (int(v) for v in rng.integers(k, 9, size=2))
            spec = ConvSpec(c_in, c_out, k, stride, padding, groups, bias=False)
            layer = LayerSpec("conv", spec, (INPUT,))
            shapes = {INPUT: (c_in, h, w)}
            shapes["conv"] = layer.out_shape(shapes)
            x = np.zeros((1, c_in, h, w))
            weight = np.zeros((c_out, c_in // groups, k, k))
            _, mults = naive_conv2d(x, weight, None, stride, padding, groups)
            assert layer_cost(layer, shapes) == (mults, 0)

    def test_separable_matches_naive_counter(self):
        layer = LayerSpec("sep", SeparableSpec(4, 6, 3, stride=2), (INPUT,))
        shapes = {INPUT: (4, 9, 7)}
        shapes["sep"] = layer.out_shape(shapes)
        _, dw = naive_conv2d(np.zeros((1, 4, 9, 7)), np.zeros((4, 1, 3, 3)), None, 2, 1, groups=4)
        _, pw = naive_conv2d(np.zeros((1, 4, 5, 4)), np.zeros((6, 4, 1, 1)))
        assert layer_cost(layer, shapes) == (dw + pw, 0)

    def test_fusion_costs_two_per_element(self):
        layer = LayerSpec("f", FusionSpec(8), ("a", "b"))
        assert layer_cost(layer, {"f": (8, 4, 5)}) == (2 * 160, 0)

    def test_pool_is_side_column_only(self):
        layer = LayerSpec("p", PoolSpec("max", 3, 2, 1), (INPUT,))
        macs, other = layer_cost(layer, {INPUT: (2, 8, 8), "p": (2, 4, 4)})
        assert macs == 0 and other == 32 * 9


# ============================================================================
# Test: resolution sweep
# ============================================================================


class TestResolutionSweep:
    def test_exact_width_doubling(self, default_graph):
        assert count_macs(default_graph, 1024, 2048).macs == 2 * count_macs(default_graph, 1024, 1024).macs

    def test_exact_quadrupling_when_both_sides_double(self, default_graph):
        assert count_macs(default_graph, 1024, 1024).macs == 4 * count_macs(default_graph, 512, 512).macs

    @pytest.mark.parametrize("h,w", [(128, 128), (512, 512), (113, 97)])
    def test_params_do_not_depend_on_resolution(self, default_graph, h, w):
        assert count_macs(default_graph, h, w).params == count_params(default_graph).total == TOTAL_PARAMS


    def test_flops_are_twice_macs(self, default_graph):
        report = count_macs(default_graph, 512, 1024)
        assert report.flops == 2 * report.macs

    def test_macs_grow_with_pixels(self, default_graph):
        sweep = resolution_sweep(default_graph, FLOPS_RESOLUTIONS)
        by_pixels = sorted(sweep.reports, key=lambda r: r.input_resolution[0] * r.input_resolution[1])
        macs = [r.macs for r in by_pixels]
        assert macs == sorted(macs)

    def test_published_resolutions(self):
        assert FLOPS_RESOLUTIONS == [(360, 640), (713, 713), (512, 1024), (768, 1536), (1024, 1024), (1024, 2048)]
        assert PUBLISHED_FLOPS_G[(1024, 2048)] == 4.50

    def test_macs_by_factor_sums_to_total(self, default_graph):
        report = count_macs(default_graph, 256, 512)
        breakdown = macs_by_factor(report)
        assert sum(breakdown.values()) == report.macs
        assert set(breakdown) <= {1, 2, 4, 8, 16, 32, 64, 128}
        assert breakdown[2] > 0

    def test_empty_sweep(self, default_graph):
        with pytest.raises(GeometryError):
            resolution_sweep(default_graph, [])

    def test_non_positive_resolution(self, default_graph):
        with pytest.raises(GeometryError):
            count_macs(default_graph, 0, 64)


# ============================================================================
# Test: serialisation
# ============================================================================


class TestReports:
    def test_layer_csv(self, default_graph):
        text = count_macs(default_graph, 64, 64).to_csv()
        lines = text.strip().splitlines()
        assert lines[0] == "layer,kind,out_shape,params,macs"
        assert lines[1].startswith("stem,conv,16x32x32,")
        assert lines[-1] == f"total,,,{TOTAL_PARAMS},{count_macs(default_graph, 64, 64).macs}"
        assert len(lines) == len(default_graph.layers) + 2

    def test_sweep_csv(self, default_graph):
        sweep = resolution_sweep(default_graph, [(128, 128), (128, 256)])
        lines = sweep.to_csv().strip().splitlines()
        assert lines[0] == "h,w,params,macs,flops,other_ops"
        assert lines[1].startswith(f"128,128,{TOTAL_PARAMS},")
        assert len(lines) == 3

    def test_table_lists_params_once(self, default_graph):
        table = resolution_sweep(default_graph, [(360, 640), (128, 128)]).format_table()
        params_line = next(line for line in table.splitlines() if line.startswith("params"))
        assert params_line.split()[-1] == "0.618"
        assert "published" in table
        assert "ratio" in table

    def test_table_without_reference(self, default_graph):
        table = resolution_sweep(default_graph, [(128, 128)]).format_table()
        assert "published" not in table


class TestSizeCategory:
    @pytest.mark.parametrize(
        "params,flops,expected",
        [
            (0.6e6, 4.5e9, "tiny"),
            (0.6e6, 25e9, "small"),
            (5e6, 5e9, "small"),
            (50e6, 150e9, "medium"),
            (250e6, 400e9, "large"),
        ],
    )
    def test_bands(self, params, flops, expected):
        assert size_category(params, flops) == expected
