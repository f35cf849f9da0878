"""
Tests for the forward neural operations.

These tests verify:
- conv2d shape formula, hand-computed values and naive-oracle equality
- separable convolution composition
- max / avg pooling including the valid-count average
- half-pixel bilinear resize
- Weighted fusion, cross-entropy and argmax
"""

import math

import numpy as np
import pytest

from bcpnet.exceptions import GeometryError, LabelError, ShapeError
from bcpnet.nnops import (
    IGNORE_INDEX,
    ConvParams,
    FusionWeights,
    PoolParams,
    argmax_labels,
    bilinear_resize,
    conv2d,
    conv2d_array,
    out_size,
    pool2d,
    pool2d_array,
    separable_conv,
    softmax_cross_entropy,
    softmax_cross_entropy_array,
    weighted_fusion,
)
from bcpnet.tensor import Tensor4, create

from .oracles import naive_conv2d, naive_pool2d, naive_resize


def t(arr):
    return Tensor4.from_array(np.asarray(arr, dtype=np.float64))


def ramp4():
    return t(np.arange(16).reshape(1, 1, 4, 4))


def delta_kernel(c):
    w = np.zeros((c, 1, 3, 3))
    w[:, 0, 1, 1] = 1.0
    return t(w)


# ============================================================================
# Test: conv2d
# ============================================================================


class TestConv2d:
    def test_pointwise_scalar(self):
        out = conv2d(t([[[[3.0]]]]), ConvParams(t([[[[2.5]]]])))
        assert out.data.item() == 7.5

    def test_depthwise_delta_is_identity(self, rng):
        x = t(rng.standard_normal((1, 4, 5, 6)))
        out = conv2d(x, ConvParams(delta_kernel(4), padding=1, groups=4))
        np.testing.assert_array_equal(out.data, x.data)

    def test_all_ones_corner(self):
        out = conv2d(ramp4(), ConvParams(t(np.ones((1, 1, 3, 3))), padding=1))
        assert out.data[0, 0, 0, 0] == 10.0

    def test_shape_formula(self):
        x = create((2, 3, 17, 23), 1.0)
        out = conv2d(x, ConvParams(create((8, 3, 3, 3), 0.1), stride=2, padding=1))
        assert out.shape == (2, 8, 9, 12)

    def test_bias_is_added(self):
        p = ConvParams(t(np.zeros((2, 1, 1, 1))), bias=t(np.array([1.0, -2.0]).reshape(1, 2, 1, 1)))
        out = conv2d(create((1, 1, 2, 2), 5.0, "float64"), p)
        np.testing.assert_array_equal(out.data[0, :, 0, 0], [1.0, -2.0])

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            conv2d(create((1, 4, 3, 3)), ConvParams(create((2, 3, 1, 1))))

    def test_non_positive_output(self):
        with pytest.raises(GeometryError):
            conv2d(create((1, 1, 2, 2)), ConvParams(create((1, 1, 5, 5))))

    def test_even_kernel_rejected(self):
        with pytest.raises(GeometryError):
            ConvParams(create((1, 1, 2, 2)))

    def test_matches_naive_oracle(self, rng):
        for _ in range(40):
            groups = int(rng.choice([1, 2]))
            c_in = groups * int(rng.integers(1, 3))
            c_out = groups * int(rng.integers(1, 3))
            k = int(rng.choice([1, 3, 5]))
            stride = int(rng.integers(1, 3))
            padding = int(rng.integers(0, k // 2 + 1))
            h, w = (int(v) for v in rng.integers(k, 10, size=2))
            x = rng.integers(-4, 5, size=(int(rng.integers(1, 3)), c_in, h, w)).astype(np.float64)
            weight = rng.integers(-3, 4, size=(c_out, c_in // groups, k, k)).astype(np.float64)
            bias = rng.integers(-2, 3, size=(1, c_out, 1, 1)).astype(np.float64)
            got = conv2d_array(x, weight, bias, stride, padding, groups)
            want, _ = naive_conv2d(x, weight, bias, stride, padding, groups)
            np.testing.assert_array_equal(got, want)

    def test_depthwise_matches_naive_oracle(self, rng):
        x = rng.integers(-4, 5, size=(2, 4, 9, 9)).astype(np.float64)
        weight = rng.integers(-3, 4, size=(4, 1, 3, 3)).astype(np.float64)
        got = conv2d_array(x, weight, None, 2, 1, groups=4)
        want, _ = naive_conv2d(x, weight, None, 2, 1, groups=4)
        np.testing.assert_array_equal(got, want)

    def test_linearity(self, rng):
        x = rng.standard_normal((1, 3, 7, 7))
        y = rng.standard_normal((1, 3, 7, 7))
        weight = rng.standard_normal((4, 3, 3, 3))
        lhs = conv2d_array(2.0 * x - 3.0 * y, weight, None, 1, 1)
        rhs = 2.0 * conv2d_array(x, weight, None, 1, 1) - 3.0 * conv2d_array(y, weight, None, 1, 1)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


# ============================================================================
# Test: separable convolution
# ============================================================================


class TestSeparableConv:
    def test_composed_identity(self, rng):
        x = t(rng.standard_normal((1, 3, 5, 5)))
        pw = ConvParams(t(np.eye(3).reshape(3, 3, 1, 1)))
        out = separable_conv(x, ConvParams(delta_kernel(3), padding=1, groups=3), pw)
        np.testing.assert_array_equal(out.data, x.data)

    def test_equals_explicit_composition(self, rng):
        x = t(rng.standard_normal((2, 4, 6, 6)))
        dw = ConvParams(t(rng.standard_normal((4, 1, 3, 3))), padding=1, groups=4)
        pw = ConvParams(t(rng.standard_normal((5, 4, 1, 1))), bias=t(rng.standard_normal((1, 5, 1, 1))))
        assert separable_conv(x, dw, pw).equals(conv2d(conv2d(x, dw), pw))

    def test_rejects_non_depthwise_first_stage(self):
        x = create((1, 2, 4, 4))
        with pytest.raises(ShapeError):
            separable_conv(x, ConvParams(create((2, 2, 3, 3)), padding=1), ConvParams(create((2, 2, 1, 1))))


# ============================================================================
# Test: pooling
# ============================================================================


class TestPool2d:
    def test_max_ramp(self):
        out = pool2d(ramp4(), PoolParams("max", 3, 2, 1))
        np.testing.assert_array_equal(out.data[0, 0], [[5, 7], [13, 15]])

    @pytest.mark.parametrize("kind", ["max", "avg"])
    @pytest.mark.parametrize("k", [3, 5])
    def test_constant_input(self, kind, k):
        x = create((1, 2, 7, 9), 3.25, "float64")
        out = pool2d(x, PoolParams(kind, k, 2, k // 2))
        assert np.all(out.data == 3.25)

    def test_shape_is_ceil_half(self):
        assert out_size(17, 3, 2, 1) == 9 == math.ceil(17 / 2)

    def test_avg_divides_by_valid_count(self):
        out = pool2d(ramp4(), PoolParams("avg", 3, 2, 1))
        assert out.data[0, 0, 0, 0] == (0 + 1 + 4 + 5) / 4

    def test_max_bounded_by_global_max(self, rng):
        x = t(rng.standard_normal((1, 3, 8, 8)))
        assert pool2d(x, PoolParams()).data.max() <= x.data.max()

    def test_routing_marks_first_maximum(self):
        x = np.zeros((1, 1, 3, 3))
        _, routing = pool2d_array(x, "max", 3, 2, 1)
        # window of output (0, 0) starts in the padding; first in-bounds tap is (1, 1) -> index 4
        assert routing[0, 0, 0, 0] == 4

    def test_avg_has_no_routing(self):
        _, routing = pool2d_array(np.ones((1, 1, 4, 4)), "avg", 3, 2, 1)
        assert routing is None

    @pytest.mark.parametrize("kind", ["max", "avg"])
    def test_matches_naive_oracle(self, rng, kind):
        for k in (3, 5):
            x = rng.standard_normal((2, 3, 9, 7))
            got, _ = pool2d_array(x, kind, k, 2, k // 2)
            want, _ = naive_pool2d(x, kind, k, 2, k // 2)
            np.testing.assert_array_equal(got, want)

    def test_invalid_params(self):
        with pytest.raises(GeometryError):
            PoolParams("max", 4)
        with pytest.raises(GeometryError):
            PoolParams("median")  # type: ignore[arg-type]


# ============================================================================
# Test: bilinear resize
# ============================================================================


class TestBilinearResize:
    def test_half_pixel_row(self):
        out = bilinear_resize(t([[[[0.0, 1.0]]]]), 1, 4)
        np.testing.assert_allclose(out.data[0, 0, 0], [0.0, 0.25, 0.75, 1.0])

    def test_constant_preserved(self):
        out = bilinear_resize(create((1, 2, 3, 5), 0.7, "float64"), 11, 4)
        np.testing.assert_allclose(out.data, 0.7, rtol=0, atol=1e-14)

    def test_same_size_is_identity(self, rng):
        x = t(rng.standard_normal((1, 2, 4, 4)))
        assert bilinear_resize(x, 4, 4).equals(x)

    def test_bounds_preserved(self, rng):
        x = t(rng.standard_normal((1, 1, 5, 5)))
        out = bilinear_resize(x, 13, 7).data
        assert out.min() >= x.data.min() and out.max() <= x.data.max()

    def test_matches_naive_oracle(self, rng):
        for (h, w), (oh, ow) in [((4, 4), (8, 8)), ((5, 3), (9, 12)), ((8, 8), (3, 5)), ((2, 7), (16, 7))]:
            x = rng.standard_normal((1, 2, h, w))
            want, _ = naive_resize(x, oh, ow)
            np.testing.assert_array_equal(bilinear_resize(t(x), oh, ow).data, want)


# ============================================================================
# Test: weighted fusion
# ============================================================================


class TestWeightedFusion:
    def test_theta_only_is_bit_identical(self, rng):
        s = t(rng.standard_normal((1, 2, 3, 3)))
        c = t(rng.standard_normal((1, 2, 3, 3)))
        assert weighted_fusion(s, c, FusionWeights(1.0, 0.0)).equals(s)

    def test_sigma_only(self, rng):
        s = t(rng.standard_normal((1, 2, 3, 3)))
        c = t(rng.standard_normal((1, 2, 3, 3)))
        assert weighted_fusion(s, c, FusionWeights(0.0, 1.0)).equals(c)

    def test_direct_arithmetic(self):
        out = weighted_fusion(t([[[[1.0, 2.0]]]]), t([[[[3.0, 4.0]]]]), FusionWeights(0.5, 2.0))
        np.testing.assert_array_equal(out.flat(), [6.5, 9.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            weighted_fusion(create((1, 1, 2, 2)), create((1, 1, 4, 4)), FusionWeights())


# ============================================================================
# Test: loss and prediction
# ============================================================================


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss, _ = softmax_cross_entropy(create((2, 5, 3, 3), 0.3, "float64"), np.zeros((2, 3, 3), dtype=np.int64))
        assert loss == pytest.approx(math.log(5), rel=1e-12)

    def test_loss_shrinks_with_margin(self):
        labels = np.zeros((1, 1, 1), dtype=np.int64)
        losses = []
        for margin in (1.0, 4.0, 16.0):
            logits = np.zeros((1, 3, 1, 1))
            logits[0, 0] = margin
            losses.append(softmax_cross_entropy_array(logits, labels)[0])
        assert losses[0] > losses[1] > losses[2] > 0

    def test_grad_sums_to_zero_over_classes(self, rng):
        logits = rng.standard_normal((2, 4, 3, 3))
        labels = rng.integers(0, 4, size=(2, 3, 3))
        _, grad = softmax_cross_entropy_array(logits, labels)
        np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-15)

    def test_ignored_pixels_have_zero_grad(self, rng):
        logits = rng.standard_normal((1, 3, 2, 2))
        labels = np.array([[[0, IGNORE_INDEX], [2, 1]]])
        _, grad = softmax_cross_entropy_array(logits, labels)
        assert not grad[0, :, 0, 1].any()

    def test_all_ignored(self):
        loss, grad = softmax_cross_entropy_array(np.ones((1, 2, 2, 2)), np.full((1, 2, 2), IGNORE_INDEX))
        assert loss == 0.0 and not grad.any()

    def test_grad_matches_finite_differences(self, rng):
        logits = rng.standard_normal((1, 3, 2, 3))
        labels = np.array([[[0, 1, 2], [IGNORE_INDEX, 1, 0]]])
        _, grad = softmax_cross_entropy_array(logits, labels)
        eps = 1e-6
        for idx in range(logits.size):
            plus = logits.copy()
            plus.flat[idx] += eps
            minus = logits.copy()
            minus.flat[idx] -= eps
            numeric = (softmax_cross_entropy_array(plus, labels)[0] - softmax_cross_entropy_array(minus, labels)[0]) / (2 * eps)
            analytic = grad.flat[idx]
            assert abs(numeric - analytic) <= 1e-6 * max(1e-3, abs(numeric) + abs(analytic))

    def test_out_of_range_label(self):
        with pytest.raises(LabelError):
            softmax_cross_entropy_array(np.zeros((1, 3, 1, 1)), np.array([[[3]]]))


class TestArgmaxLabels:
    def test_single_class(self):
        assert not argmax_labels(create((1, 1, 3, 3), 0.4)).any()

    def test_tie_takes_lowest_index(self):
        logits = t(np.array([0.2, 0.9, 0.9]).reshape(1, 3, 1, 1))
        assert argmax_labels(logits)[0, 0, 0] == 1

    def test_shift_invariance(self, rng):
        logits = rng.standard_normal((2, 4, 3, 3))
        shifted = logits + rng.standard_normal((2, 1, 3, 3))
        np.testing.assert_array_equal(argmax_labels(t(logits)), argmax_labels(t(shifted)))
