"""
Tests for the NCHW tensor type.

These tests verify:
- create with scalar and generator fills
- Shape validation and non-finite rejection
- axpy arithmetic and shape checks
- map_unary kinds
- Immutability of wrapped data
"""

import numpy as np
import pytest

from bcpnet.exceptions import InvalidShapeError, NumericError, ShapeError
from bcpnet.tensor import Tensor4, axpy, check_shape, create, map_unary, zeros, zeros_like


def row(values, dtype="float64"):
    return Tensor4.from_array(np.array(values, dtype=dtype).reshape(1, 1, 1, -1))


# ============================================================================
# Test: create
# ============================================================================


class TestCreate:
    def test_zero_fill(self):
        t = create((1, 1, 2, 2), 0.0)
        assert t.shape == (1, 1, 2, 2)
        assert not t.data.any()

    def test_ones_sum_matches_shape(self):
        t = create((2, 3, 4, 5), 1.0)
        assert t.data.sum() == 120

    def test_single_element(self):
        t = create((1, 1, 1, 1), 7.5)
        assert t.data.item() == 7.5

    def test_default_dtype_is_float32(self):
        assert create((1, 1, 1, 1)).dtype == np.float32
        assert create((1, 1, 1, 1), dtype="float64").dtype == np.float64

    def test_generator_round_trips_nchw_order(self):
        shape = (2, 3, 4, 5)
        t = create(shape, lambda n, c, h, w: ((n * 3 + c) * 4 + h) * 5 + w, "float64")
        np.testing.assert_array_equal(t.flat(), np.arange(120, dtype=np.float64))

    @pytest.mark.parametrize("shape", [(0, 1, 1, 1), (1, 1, -2, 1), (1, 1, 1), (1, 1, 1, 1, 1)])
    def test_invalid_shapes(self, shape):
        with pytest.raises(InvalidShapeError):
            create(shape)

    def test_overflow_shape(self):
        with pytest.raises(InvalidShapeError):
            check_shape((2**31, 2**31, 2**31, 2**31))

    def test_non_finite_fill(self):
        with pytest.raises(NumericError):
            create((1, 1, 1, 1), float("nan"))

    def test_from_array_rejects_inf(self):
        with pytest.raises(NumericError):
            Tensor4.from_array(np.full((1, 1, 1, 2), np.inf))

    def test_unsupported_dtype(self):
        with pytest.raises(InvalidShapeError):
            create((1, 1, 1, 1), dtype="int32")


# ============================================================================
# Test: axpy
# ============================================================================


class TestAxpy:
    def test_identity(self, rng):
        x = Tensor4.from_array(rng.standard_normal((1, 2, 3, 3)))
        y = Tensor4.from_array(rng.standard_normal((1, 2, 3, 3)))
        assert axpy(1.0, x, 0.0, y).equals(x)

    def test_direct_arithmetic(self):
        out = axpy(0.5, row([1, 2]), 2.0, row([3, 4]))
        np.testing.assert_array_equal(out.flat(), [6.5, 9.0])

    def test_cancellation(self, rng):
        x = Tensor4.from_array(rng.standard_normal((2, 1, 2, 2)))
        assert not axpy(-1.0, x, 1.0, x).data.any()

    def test_plus_zeros_is_exact(self, rng):
        x = Tensor4.from_array(rng.standard_normal((1, 3, 4, 4)).astype(np.float32))
        assert axpy(1.0, x, 1.0, zeros_like(x)).equals(x)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            axpy(1.0, zeros((1, 1, 2, 2)), 1.0, zeros((1, 1, 3, 3)))


# ============================================================================
# Test: map_unary
# ============================================================================


class TestMapUnary:
    def test_relu(self):
        np.testing.assert_array_equal(map_unary(row([-1, 0, 2]), "relu").flat(), [0, 0, 2])

    def test_relu6(self):
        np.testing.assert_array_equal(map_unary(row([7, 3]), "relu6").flat(), [6, 3])

    def test_copy_is_bit_identical(self, rng):
        x = Tensor4.from_array(rng.standard_normal((1, 2, 2, 2)))
        assert map_unary(x, "copy").equals(x)

    @pytest.mark.parametrize("kind", ["relu", "relu6", "copy"])
    def test_shape_preserved(self, kind):
        x = create((2, 3, 5, 7), -0.5)
        assert map_unary(x, kind).shape == x.shape


# ============================================================================
# Test: immutability
# ============================================================================


class TestImmutability:
    def test_data_is_read_only(self):
        t = create((1, 1, 2, 2), 1.0)
        with pytest.raises(ValueError):
            t.data[0, 0, 0, 0] = 5.0

    def test_from_array_copies(self):
        src = np.zeros((1, 1, 2, 2))
        t = Tensor4.from_array(src)
        src[0, 0, 0, 0] = 3.0
        assert t.data[0, 0, 0, 0] == 0.0

    def test_astype(self):
        t = create((1, 1, 1, 1), 2.0)
        assert t.astype("float32") is t
        assert t.astype("float64").dtype == np.float64
