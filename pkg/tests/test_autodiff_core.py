"""
Tests for the reverse-mode autodiff tape.
"""

import math

import numpy as np
import pytest

from autodiff_core import (COS_EPS, Graph, SUITE_FLOOR, as_tensor, backward, check_primitives, forward,
                           grad_check)
from errors import LabError, NotScalarError, ShapeError


def square_sum(g, v):
    return g.sum(g.mul(v["x"], v["x"]))


def test_square_forward_and_backward():
    """f(x) = x*x at 3 gives 9 and df/dx = 6."""
    graph = Graph(square_sum)
    assert forward(graph, {"x": [[3.0]]})[0, 0] == 9.0
    assert backward(graph)["x"][0, 0] == 6.0


def test_matmul_with_identity_returns_input(rng):
    x = rng.standard_normal((3, 4))
    graph = Graph(lambda g, v: g.matmul(v["x"], g.transpose(g.constant(np.eye(4)))))
    np.testing.assert_array_equal(forward(graph, {"x": x}), x)


def test_concat_matmul_relu_matches_scalar_loop():
    """Composition on a 2x3 input against a hand-written loop."""
    x = np.array([[1.0, -2.0, 0.5], [0.3, 0.7, -1.1]])
    y = np.array([[0.2], [-0.4]])
    w = np.array([[0.5, -1.0], [1.5, 0.2], [-0.3, 0.8], [2.0, -0.6]])

    graph = Graph(lambda g, v: g.relu(g.matmul(g.concat_cols(v["x"], v["y"]), v["w"])))
    out = forward(graph, {"x": x, "y": y, "w": w})

    expected = np.zeros((2, 2))
    for i in range(2):
        row = list(x[i]) + list(y[i])
        for j in range(2):
            total = 0.0
            for k in range(4):
                total += row[k] * w[k, j]
            expected[i, j] = max(total, 0.0)
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-15)


def test_constant_function_has_zero_gradient():
    graph = Graph(lambda g, v: g.sum(g.constant([[2.0, 3.0]])))
    forward(graph, {"x": [[1.5]]})
    assert backward(graph)["x"][0, 0] == 0.0


def test_backward_requires_scalar_root():
    graph = Graph(lambda g, v: g.mul(v["x"], v["x"]))
    forward(graph, {"x": [[1.0, 2.0]]})
    with pytest.raises(NotScalarError):
        backward(graph)


def test_shape_mismatch_names_op_and_shapes():
    graph = Graph(lambda g, v: g.sum(g.matmul(v["a"], v["b"])))
    with pytest.raises(ShapeError) as excinfo:
        forward(graph, {"a": np.ones((2, 3)), "b": np.ones((2, 3))})
    assert excinfo.value.op == "matmul"
    assert (2, 3) in excinfo.value.shapes
    assert "matmul" in str(excinfo.value)


def test_tensors_are_read_only():
    tensor = as_tensor([1.0, 2.0])
    assert tensor.shape == (1, 2)
    with pytest.raises(ValueError):
        tensor[0, 0] = 5.0


def test_nodes_from_another_graph_are_rejected():
    first, second = Graph(), Graph()
    a = first.constant(1.0)
    b = second.constant(2.0)
    with pytest.raises(LabError):
        second.add(a, b)


def test_relu_subgradient_at_zero_is_zero():
    graph = Graph(lambda g, v: g.sum(g.relu(v["x"])))
    forward(graph, {"x": [[0.0, 1.0, -1.0]]})
    np.testing.assert_array_equal(backward(graph)["x"], [[0.0, 1.0, 0.0]])


def test_cosine_of_zero_vector_is_zero():
    graph = Graph(lambda g, v: g.sum(g.cosine(v["a"], v["b"])))
    assert forward(graph, {"a": [[0.0, 0.0]], "b": [[1.0, 2.0]]})[0, 0] == 0.0
    assert all(np.all(np.isfinite(grad)) for grad in backward(graph).values())


def test_cosine_guard_is_tiny():
    graph = Graph(lambda g, v: g.sum(g.cosine(v["a"], v["a"])))
    value = forward(graph, {"a": [[3.0, 4.0]]})[0, 0]
    assert value == pytest.approx(1.0, abs=10 * COS_EPS)


def test_bce_with_logits_reference_values():
    def bce(logits, targets):
        graph = Graph(lambda g, v: g.bce_with_logits(v["z"], targets))
        return forward(graph, {"z": logits})[0, 0]

    assert bce([[0.0]], [[1.0]]) == pytest.approx(math.log(2.0), abs=1e-12)
    assert bce([[30.0]], [[1.0]]) < 1e-12
    expected = (math.log1p(math.exp(-1.0)) + math.log1p(math.exp(-2.0))) / 2
    assert bce([[1.0, -2.0]], [[1.0, 0.0]]) == pytest.approx(expected, abs=1e-12)


def test_bce_saturated_logits_stay_finite():
    graph = Graph(lambda g, v: g.bce_with_logits(v["z"], [[0.0, 1.0]]))
    value = forward(graph, {"z": [[800.0, -800.0]]})
    assert np.isfinite(value).all()
    assert value[0, 0] == pytest.approx(800.0)


def test_grad_check_linear_function_is_exact(rng):
    w = rng.standard_normal((3, 2))
    error = grad_check(lambda g, v: g.sum(g.matmul(v["x"], g.constant(w))), {"x": rng.standard_normal((4, 3))})
    assert error < 1e-9


def test_grad_check_sigmoid_chain():
    error = grad_check(lambda g, v: g.sum(g.sigmoid(g.sigmoid(v["x"]))), {"x": [[0.5]]})
    assert error < 1e-6


def test_backward_is_linear_in_the_root(rng):
    """grad(f + h) == grad(f) + grad(h)."""
    point = {"x": rng.standard_normal((3, 3))}

    def f(g, v):
        return g.sum(g.sigmoid(v["x"]))

    def h(g, v):
        return g.l2_norm(g.matmul(v["x"], v["x"]))

    grads = []
    for builder in (f, h, lambda g, v: g.add(f(g, v), h(g, v))):
        graph = Graph(builder)
        forward(graph, point)
        grads.append(backward(graph)["x"])
    np.testing.assert_allclose(grads[2], grads[0] + grads[1], rtol=0, atol=1e-12)


def test_forward_backward_is_deterministic(rng):
    point = {"x": rng.standard_normal((4, 4)), "y": rng.standard_normal((1, 4))}

    def builder(g, v):
        return g.mean(g.cosine(g.relu(g.add(v["x"], v["y"])), v["y"]))

    results = []
    for _ in range(2):
        graph = Graph(builder)
        value = forward(graph, point)
        results.append((value.tobytes(), {k: g.tobytes() for k, g in backward(graph).items()}))
    assert results[0] == results[1]


def test_every_primitive_matches_finite_differences():
    """100 random probes per primitive."""
    worst = check_primitives(np.random.default_rng(99), trials=100, floor=SUITE_FLOOR)
    assert len(worst) == 18
    for op, error in worst.items():
        assert error < 1e-6, f"{op}: {error:.2e}"


def test_row_broadcast_gradients_sum_over_rows():
    graph = Graph(lambda g, v: g.sum(g.mul(v["x"], v["r"])))
    x = np.arange(6.0).reshape(3, 2)
    forward(graph, {"x": x, "r": [[1.0, -1.0]]})
    np.testing.assert_array_equal(backward(graph)["r"], x.sum(axis=0, keepdims=True))
