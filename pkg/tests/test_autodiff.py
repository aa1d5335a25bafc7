import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from shared import ops
from shared.autodiff import Graph, backward, record
from shared.errors import NumericError, ShapeError, SingularMatrixError
from shared.schemas import Parameter


def test_add_and_scalar_mul():
    g = Graph()
    a = g.constant([1.0, 2.0])
    b = g.constant([3.0, 4.0])
    assert_array_equal(g.value(ops.add(g, a, b)), [4.0, 6.0])
    assert_array_equal(g.value(ops.mul(g, g.constant([2.0, 3.0]), g.constant(0.0))), [0.0, 0.0])


def test_elementwise_examples():
    g = Graph()
    assert_array_equal(g.value(ops.abs_(g, g.constant([-1.0, 0.0, 2.0]))), [1.0, 0.0, 2.0])
    assert_array_equal(g.value(ops.square(g, g.constant([3.0]))), [9.0])
    x = g.constant([0.3, -7.0, 1e9])
    assert_array_equal(g.value(ops.sub(g, x, x)), np.zeros(3))


def test_shape_mismatch_names_op():
    g = Graph()
    with pytest.raises(ShapeError, match="add"):
        ops.add(g, g.constant(np.ones(2)), g.constant(np.ones(3)))
    with pytest.raises(ShapeError, match="matmul"):
        ops.matmul(g, g.constant(np.ones((2, 3))), g.constant(np.ones((2, 3))))


def test_record_rejects_unknown_op_and_forward_refs():
    g = Graph()
    a = g.constant(1.0)
    with pytest.raises(KeyError):
        record(g, "nope", (a,))
    with pytest.raises(ValueError):
        record(g, "add", (a, 5))


def test_matmul_examples(rng):
    g = Graph()
    x = rng.normal(size=(3, 2))
    assert_array_equal(g.value(ops.matmul(g, g.constant(np.eye(3)), g.constant(x))), x)
    out = ops.matmul(g, g.constant([[1.0, 2.0], [3.0, 4.0]]), g.constant([[1.0], [1.0]]))
    assert_array_equal(g.value(out), [[3.0], [7.0]])


def test_conv2d_valid_examples(rng):
    g = Graph()
    out = ops.conv2d_valid(g, g.constant(np.ones((5, 5))), g.constant(np.ones((3, 3))))
    assert_array_equal(g.value(out), np.full((3, 3), 9.0))

    x = rng.normal(size=(4, 6))
    assert_allclose(g.value(ops.conv2d_valid(g, g.constant(x), g.constant([[2.5]]))), 2.5 * x)

    x = rng.normal(size=(6, 6))
    k = rng.normal(size=(3, 3))
    naive = np.zeros((4, 4))
    for r in range(4):
        for c in range(4):
            for a in range(3):
                for b in range(3):
                    naive[r, c] += k[a, b] * x[r + a, c + b]
    assert_allclose(g.value(ops.conv2d_valid(g, g.constant(x), g.constant(k))), naive, rtol=0, atol=1e-12)


def test_conv2d_kernel_larger_than_input():
    g = Graph()
    with pytest.raises(ShapeError):
        ops.conv2d_valid(g, g.constant(np.ones((2, 2))), g.constant(np.ones((3, 3))))


def test_reduce_min_indexed_examples():
    g = Graph()
    single = np.arange(6.0).reshape(1, 2, 3)
    v, idx = ops.reduce_min_indexed(g, g.constant(single))
    assert_array_equal(g.value(v), single[0])
    assert_array_equal(idx, np.zeros((2, 3), dtype=int))

    v, idx = ops.reduce_min_indexed(g, g.constant([[5.0], [2.0], [7.0]]))
    assert_array_equal(g.value(v), [2.0])
    assert_array_equal(idx, [1])

    v, idx = ops.reduce_min_indexed(g, g.constant([[3.0], [1.0], [1.0]]))
    assert_array_equal(idx, [1])


def test_reduce_min_gradient_routes_one_unit(rng):
    x = Parameter("x", rng.normal(size=(4, 3, 5)))
    g = Graph()
    v, idx = ops.reduce_min_indexed(g, g.parameter(x))
    grad = backward(g, ops.sum_(g, v))["x"]
    assert_array_equal(grad.sum(axis=0), np.ones((3, 5)))
    assert set(np.unique(grad)) <= {0.0, 1.0}
    assert np.all(g.value(v) <= x.value)


def test_softmax_examples():
    g = Graph()
    assert_allclose(g.value(ops.stable_softmax(g, g.constant(np.full(4, 3.2)))), np.full(4, 0.25))
    out = g.value(ops.stable_softmax(g, g.constant([0.0, -1e9])))
    assert_allclose(out, [1.0, 0.0], atol=1e-300)
    z = np.array([0.5, -1.25, 2.0])
    a = g.value(ops.stable_softmax(g, g.constant(z)))
    b = g.value(ops.stable_softmax(g, g.constant(z + 8.0)))
    assert abs(a.sum() - 1.0) < 1e-12
    assert_array_equal(a, b)


def test_softmax_rejects_non_finite():
    g = Graph()
    with pytest.raises(NumericError):
        ops.stable_softmax(g, g.constant([0.0, np.inf]))


def test_mat_inverse_small_examples(rng):
    g = Graph()
    assert_array_equal(g.value(ops.mat_inverse_small(g, g.constant(np.eye(2)))), np.eye(2))
    assert_array_equal(g.value(ops.mat_inverse_small(g, g.constant([[2.0]]))), [[0.5]])
    for d in (2, 3):
        for _ in range(50):
            a = rng.uniform(-10, 10, size=(d, d))
            if abs(np.linalg.det(a)) <= 1e-6:
                continue
            inv = g.value(ops.mat_inverse_small(g, g.constant(a)))
            assert np.max(np.abs(a @ inv - np.eye(d))) < 1e-10


def test_mat_inverse_singular_carries_det():
    g = Graph()
    with pytest.raises(SingularMatrixError) as err:
        ops.mat_inverse_small(g, g.constant([[1.0, 2.0], [2.0, 4.0]]))
    assert err.value.det == 0.0


def test_masked_inverse_flags_instead_of_raising():
    g = Graph()
    batch = np.array([np.eye(2), [[1.0, 2.0], [2.0, 4.0]]])
    inv, ok = ops.masked_inverse(g, g.constant(batch))
    assert_array_equal(ok, [True, False])
    assert_array_equal(g.value(inv)[0], np.eye(2))
    assert np.all(np.isfinite(g.value(inv)))


def test_backward_examples():
    w = Parameter("w", np.arange(5.0))
    g = Graph()
    assert_array_equal(backward(g, ops.sum_(g, g.parameter(w)))["w"], np.ones(5))

    w = Parameter("w", 3.0)
    g = Graph()
    assert backward(g, ops.square(g, g.parameter(w)))["w"] == 6.0


def test_backward_accumulates_fan_out():
    w = Parameter("w", 2.0)
    g = Graph()
    a = g.parameter(w)
    b = g.parameter(w)
    assert a == b
    loss = ops.add(g, ops.mul(g, a, a), ops.scale(g, b, 3.0))
    assert backward(g, loss)["w"] == 7.0


def test_backward_needs_scalar_loss():
    g = Graph()
    w = g.parameter(Parameter("w", np.ones(3)))
    with pytest.raises(ShapeError):
        backward(g, w)


def test_abs_subgradient_at_zero_is_zero():
    w = Parameter("w", np.array([0.0, -2.0, 3.0]))
    g = Graph()
    grad = backward(g, ops.sum_(g, ops.abs_(g, g.parameter(w))))["w"]
    assert_array_equal(grad, [0.0, -1.0, 1.0])


def test_where_with_scalar_operand_reduces_gradient():
    a = Parameter("a", 2.0)
    b = Parameter("b", np.arange(4.0))
    g = Graph()
    out = ops.where(g, np.array([True, False, True, False]), g.parameter(a), g.parameter(b))
    assert_array_equal(g.value(out), [2.0, 1.0, 2.0, 3.0])
    grads = backward(g, ops.sum_(g, out))
    assert grads["a"] == 2.0
    assert_array_equal(grads["b"], [0.0, 1.0, 0.0, 1.0])


def test_shift_stack_fills_zero():
    g = Graph()
    x = np.arange(9.0).reshape(3, 3)
    out = g.value(ops.shift_stack(g, g.constant(x), [(0, 0), (1, 0), (0, -1)]))
    assert out.shape == (3, 3, 3)
    assert_array_equal(out[0], x)
    assert_array_equal(out[1], [[0, 0, 0], [0, 1, 2], [3, 4, 5]])
    assert_array_equal(out[2], [[1, 2, 0], [4, 5, 0], [7, 8, 0]])


def test_shift_stack_beyond_the_image_is_all_zero():
    g = Graph()
    x = np.arange(12.0).reshape(1, 3, 4)
    out = g.value(ops.shift_stack(g, g.constant(x), [(0, 0), (5, 0), (-1, 2)]))
    assert out.shape == (3, 1, 3, 4)
    assert_array_equal(out[1], np.zeros((1, 3, 4)))
    assert_array_equal(out[2, 0], [[0, 0, 4, 5], [0, 0, 8, 9], [0, 0, 0, 0]])


def test_box_sum_matches_ones_kernel(rng):
    g = Graph()
    x = rng.normal(size=(2, 5, 7, 6))
    for size in [(3, 3), (1, 1), (2, 4), (7, 6)]:
        box = g.value(ops.box_sum(g, g.constant(x), size))
        conv = g.value(ops.conv2d_valid(g, g.constant(x), g.constant(np.ones(size))))
        assert box.shape == conv.shape
        assert_allclose(box, conv, rtol=0, atol=1e-12)
    with pytest.raises(ShapeError):
        ops.box_sum(g, g.constant(np.ones((2, 2))), (3, 3))


def test_box_sum_gradient_counts_windows():
    g = Graph()
    p = Parameter("x", np.zeros((4, 4)))
    grads = backward(g, ops.sum_(g, ops.box_sum(g, g.parameter(p), (3, 3))))
    # each pixel is counted once per 3x3 window that covers it
    assert_array_equal(grads["x"], [[1, 2, 2, 1], [2, 4, 4, 2], [2, 4, 4, 2], [1, 2, 2, 1]])
