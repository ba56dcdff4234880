"""Tensor engine: forward values, gradients, shape and finiteness errors."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from proscale import numerics as nx
from proscale.errors import DimensionError, NumericError, ValidationError
from proscale.numerics import Tensor, grad

from reference import bilinear_point, layernorm_rows, softmax_vec

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def t(a, rg=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=rg)


class TestTensor:
    def test_rejects_nonfinite(self):
        with pytest.raises(NumericError):
            Tensor(np.array([1.0, np.nan]))
        with pytest.raises(NumericError):
            Tensor(np.array([np.inf]))

    def test_integer_data_is_cast_but_integer_dtype_rejected(self):
        assert Tensor(np.array([1, 2])).dtype == np.float64
        with pytest.raises(ValidationError):
            Tensor([1, 2], dtype=np.int64)

    def test_rejects_empty_extent(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((0, 3)))

    def test_data_is_copied_and_frozen(self):
        src = np.ones(3)
        x = Tensor(src)
        src[0] = 5.0
        assert x.data[0] == 1.0
        with pytest.raises(ValueError):
            x.data[0] = 2.0

    def test_overflow_is_an_error(self):
        x = Tensor(np.array([1e300]))
        with np.errstate(over="ignore"), pytest.raises(NumericError):
            nx.mul(x, x)

    def test_backward_accumulates_on_leaves(self):
        a = t([[1.0, 2.0]], rg=True)
        b = t([[3.0], [4.0]], rg=True)
        (a @ b).backward()
        np.testing.assert_allclose(a.grad, [[3.0, 4.0]])
        np.testing.assert_allclose(b.grad, [[1.0], [2.0]])

    def test_grad_of_unused_input_is_zero(self):
        a, b = t([1.0, 2.0], rg=True), t([5.0], rg=True)
        ga, gb = grad(nx.scale(a, 2.0), [a, b])
        np.testing.assert_array_equal(ga, [2.0, 2.0])
        np.testing.assert_array_equal(gb, [0.0])

    def test_float32_preserved(self):
        x = Tensor(np.ones((2, 2), dtype=np.float32))
        assert nx.softmax(x).dtype == np.float32


class TestMatmul:
    def test_value(self):
        a, b = np.arange(6.0).reshape(2, 3), np.arange(12.0).reshape(3, 4)
        np.testing.assert_allclose(nx.matmul(t(a), t(b)).data, a @ b)

    def test_grad_of_sum_is_ones_times_bT(self):
        rng = np.random.default_rng(0)
        a, b = t(rng.standard_normal((3, 4)), True), t(rng.standard_normal((4, 2)))
        (ga,) = grad(nx.matmul(a, b), [a])
        np.testing.assert_allclose(ga, np.ones((3, 2)) @ b.data.T)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(3, 4\).*\(5, 2\)"):
            nx.matmul(t(np.ones((3, 4))), t(np.ones((5, 2))))

    def test_dtype_mismatch(self):
        with pytest.raises(ValidationError):
            nx.matmul(t(np.ones((2, 2))), Tensor(np.ones((2, 2), dtype=np.float32)))


class TestSoftmax:
    @given(arrays(np.float64, (3, 5), elements=finite))
    def test_rows_sum_to_one_and_match_oracle(self, x):
        out = nx.softmax(t(x), axis=-1).data
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)
        for row, ref in zip(out, x):
            np.testing.assert_allclose(row, softmax_vec(ref), rtol=1e-12)

    @given(arrays(np.float64, (2, 4), elements=finite), finite)
    def test_shift_invariant(self, x, c):
        np.testing.assert_allclose(nx.softmax(t(x)).data, nx.softmax(t(x + c)).data, atol=1e-12)

    def test_large_logits_stay_finite(self):
        out = nx.softmax(t([[1000.0, 0.0, -1000.0]])).data
        np.testing.assert_allclose(out, [[1.0, 0.0, 0.0]])

    def test_bad_axis(self):
        with pytest.raises(DimensionError):
            nx.softmax(t(np.ones((2, 2))), axis=3)


class TestLayernorm:
    @given(arrays(np.float64, (4, 6), elements=finite))
    def test_matches_oracle(self, x):
        np.testing.assert_allclose(nx.layernorm(t(x)).data, layernorm_rows(x), atol=1e-9)

    def test_affine_terms(self):
        rng = np.random.default_rng(1)
        x, g, b = rng.standard_normal((3, 4)), rng.standard_normal(4), rng.standard_normal(4)
        np.testing.assert_allclose(nx.layernorm(t(x), 1e-5, t(g), t(b)).data, layernorm_rows(x, g, b), atol=1e-12)

    def test_constant_row_is_zero(self):
        np.testing.assert_array_equal(nx.layernorm(t(np.full((2, 3), 7.0))).data, 0.0)


class TestBilinear:
    def test_pixel_centres_return_exact_values(self):
        fmap = np.arange(24.0).reshape(2, 4, 3)
        pts = np.array([[(j + 0.5) / 4, (i + 0.5) / 2] for i in range(2) for j in range(4)])
        np.testing.assert_array_equal(nx.bilinear_sample(t(fmap), t(pts)).data, fmap.reshape(8, 3))

    def test_far_outside_is_zero(self):
        fmap = np.ones((3, 3, 2))
        out = nx.bilinear_sample(t(fmap), t([[-1.0, 0.5], [0.5, 2.0]])).data
        np.testing.assert_array_equal(out, 0.0)

    def test_border_blends_with_zero(self):
        # half a pixel beyond the left edge: halfway between pixel 0 and the zero pad
        out = nx.bilinear_sample(t(np.ones((1, 2, 1)) * 4), t([[0.0, 0.5]])).data
        np.testing.assert_allclose(out, [[2.0]])

    @settings(max_examples=50)
    @given(st.integers(0, 2**31 - 1))
    def test_matches_scalar_oracle(self, seed):
        rng = np.random.default_rng(seed)
        fmap = rng.standard_normal((3, 5, 2))
        pts = rng.uniform(-0.3, 1.3, size=(7, 2))
        out = nx.bilinear_sample(t(fmap), t(pts)).data
        for row, (x, y) in zip(out, pts):
            np.testing.assert_allclose(row, bilinear_point(fmap, x, y), atol=1e-12)

    def test_shape_errors(self):
        with pytest.raises(DimensionError):
            nx.bilinear_sample(t(np.ones((2, 2))), t([[0.5, 0.5]]))
        with pytest.raises(DimensionError):
            nx.bilinear_sample(t(np.ones((2, 2, 1))), t([[0.5, 0.5, 0.5]]))


class TestPooling:
    @given(arrays(np.float64, (4, 5, 2), elements=finite))
    def test_maxpool_dominates_input(self, x):
        assert np.all(nx.maxpool2d(t(x)).data >= x)

    def test_maxpool_value(self):
        x = np.zeros((3, 3, 1))
        x[0, 0, 0] = 5.0
        out = nx.maxpool2d(t(x)).data[..., 0]
        np.testing.assert_array_equal(out, [[5, 5, 0], [5, 5, 0], [0, 0, 0]])

    def test_avgpool_counts_only_in_bounds(self):
        out = nx.avgpool2d(t(np.ones((3, 4, 2)))).data
        np.testing.assert_allclose(out, 1.0)

    def test_stride_other_than_one_rejected(self):
        with pytest.raises(ValidationError):
            nx.maxpool2d(t(np.ones((3, 3, 1))), 3, 2)


class TestElementwise:
    def test_dispatch(self):
        x = t([[-1.0, 2.0]])
        np.testing.assert_array_equal(nx.elementwise("relu", x).data, [[0.0, 2.0]])
        np.testing.assert_array_equal(nx.elementwise("scale", x, 3.0).data, [[-3.0, 6.0]])
        np.testing.assert_array_equal(nx.elementwise("add", x, x).data, [[-2.0, 4.0]])
        with pytest.raises(ValidationError):
            nx.elementwise("tanh", x)

    def test_sigmoid_zero_is_half_exactly(self):
        assert nx.sigmoid(t(np.zeros((2, 3)))).data.tolist() == [[0.5] * 3] * 2

    @given(arrays(np.float64, (5,), elements=st.floats(-700, 700)))
    def test_sigmoid_symmetry(self, x):
        s = nx.sigmoid(t(x)).data + nx.sigmoid(t(-x)).data
        np.testing.assert_allclose(s, 1.0, atol=1e-15)

    def test_column_broadcast_and_its_gradient(self):
        a, b = t(np.ones((3, 2)), True), t([[1.0], [2.0], [3.0]], True)
        ga, gb = grad(nx.mul(a, b), [a, b])
        np.testing.assert_array_equal(ga, [[1, 1], [2, 2], [3, 3]])
        np.testing.assert_array_equal(gb, [[2], [2], [2]])

    def test_unsupported_broadcast(self):
        with pytest.raises(DimensionError):
            nx.add(t(np.ones((3, 2))), t(np.ones((2, 2))))


class TestPlumbing:
    def test_concat_index_roundtrip(self):
        a, b = t(np.ones((2, 3)), True), t(np.zeros((1, 3)), True)
        c = nx.concat([a, b], axis=0)
        ga, gb = grad(nx.tsum(c[1:, :]), [a, b])
        np.testing.assert_array_equal(ga, [[0, 0, 0], [1, 1, 1]])
        np.testing.assert_array_equal(gb, [[1, 1, 1]])

    def test_broadcast_rows(self):
        out = nx.broadcast_rows(t([1.0, 2.0]), 3).data
        np.testing.assert_array_equal(out, [[1, 2]] * 3)

    def test_tree_roundtrip(self):
        tree = {"b": [t([1.0]), t([2.0])], "a": (t([3.0]),)}
        leaves = nx.tree_leaves(tree)
        assert [float(x.data[0]) for x in leaves] == [3.0, 1.0, 2.0]
        rebuilt = nx.tree_replace(tree, [t([9.0])] * 3)
        assert float(rebuilt["b"][1].data[0]) == 9.0
