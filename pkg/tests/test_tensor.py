import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from malaria_cnn import tensor as T
from malaria_cnn.errors import ShapeError


class TestTensorNew:
    def test_zero_fill(self):
        t = T.tensor_new([2, 2], 0)
        assert t.shape == (2, 2)
        assert np.array_equal(t, [[0, 0], [0, 0]])

    def test_value_list(self):
        assert np.array_equal(T.tensor_new([3], [1, 2, 3]), [1, 2, 3])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            T.tensor_new([2, 3], [1, 2, 3, 4, 5])

    @pytest.mark.parametrize("shape", [[0, 2], [2, -1], []])
    def test_bad_extents(self, shape):
        with pytest.raises(ShapeError):
            T.tensor_new(shape, 1.0)

    def test_default_dtype_is_float32(self):
        assert T.tensor_new([2], 1.0).dtype == np.float32


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2], [3, 4]])
        assert np.array_equal(T.matmul(np.eye(2), a), a)

    def test_dot(self):
        assert np.array_equal(T.matmul(np.array([[1.0, 2]]), np.array([[3.0], [4]])), [[11]])

    def test_inner_mismatch(self):
        with pytest.raises(ShapeError):
            T.matmul(np.zeros((2, 3)), np.zeros((4, 5)))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_associativity(self, m, k, n, p, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (rng.uniform(-1, 1, s) for s in ((m, k), (k, n), (n, p)))
        lhs = T.matmul(T.matmul(a, b), c)
        rhs = T.matmul(a, T.matmul(b, c))
        assert np.max(np.abs(lhs - rhs)) <= 1e-9


class TestElementwise:
    def test_add_identity(self):
        assert np.array_equal(T.elementwise("add", np.array([1.0, 2]), np.array([0.0, 0])), [1, 2])

    def test_mul(self):
        assert np.array_equal(T.elementwise("mul", np.array([2.0, 4]), np.array([3.0, 0.5])), [6, 2])

    def test_non_broadcastable(self):
        with pytest.raises(ShapeError):
            T.elementwise("add", np.zeros((2, 2)), np.zeros(3))

    def test_trailing_channel_broadcast(self):
        x = np.ones((2, 3, 3, 4))
        out = T.elementwise("mul", x, np.arange(4.0))
        assert np.array_equal(out[1, 2, 0], np.arange(4.0))

    def test_general_broadcast_rejected(self):
        with pytest.raises(ShapeError):
            T.elementwise("add", np.zeros((2, 3)), np.zeros((1, 3)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 30), st.integers(0, 2**32 - 1), st.sampled_from(["add", "mul"]))
    def test_commutes_with_permutation(self, n, seed, op):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal(n), rng.standard_normal(n)
        perm = rng.permutation(n)
        assert np.array_equal(T.elementwise(op, a, b)[perm], T.elementwise(op, a[perm], b[perm]))


class TestReduce:
    def test_mean_all(self):
        assert T.reduce("mean", np.array([[1.0, 3], [5, 7]])) == 4

    def test_max(self):
        assert T.reduce("max", np.array([[-1.0, 0], [2, -5]])) == 2

    def test_empty_axes_identity(self):
        x = np.array([[1.0, 2], [3, 4]])
        assert np.array_equal(T.reduce("sum", x, ()), x)

    def test_invalid_axis(self):
        with pytest.raises(ShapeError):
            T.reduce("sum", np.zeros((2, 2)), (2,))

    def test_keeps_storage_dtype(self):
        assert T.reduce("mean", np.ones((3, 3), dtype=np.float32), (0,)).dtype == np.float32

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(1, 6), min_size=1, max_size=4), st.floats(-1e3, 1e3))
    def test_mean_of_constant(self, shape, c):
        assert abs(float(T.reduce("mean", np.full(shape, c, dtype=np.float64))) - c) <= 1e-12 * max(1, abs(c))


class TestReshape:
    def test_flatten_row_major(self):
        assert np.array_equal(T.reshape(np.array([[1, 2], [3, 4]]), [4]), [1, 2, 3, 4])

    def test_round_trip(self):
        v = np.arange(4.0)
        assert np.array_equal(T.reshape(T.reshape(v, [2, 2]), [4]), v)

    def test_count_mismatch(self):
        with pytest.raises(ShapeError):
            T.reshape(np.zeros((2, 2)), [3])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_reshape_inverse(self, seed):
        rng = np.random.default_rng(seed)
        t = rng.standard_normal((2, 3, 4))
        for s2 in ([24], [4, 6], [2, 2, 2, 3], [1, 24]):
            assert np.array_equal(T.reshape(T.reshape(t, s2), t.shape), t)

    def test_flatten_keeps_batch(self):
        assert T.flatten(np.zeros((5, 2, 2, 3))).shape == (5, 12)
