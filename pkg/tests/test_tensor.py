import math
import subprocess
import sys
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mtdnn import tensor as T
from mtdnn.errors import ConfigError, ContractError, DimensionError, GraphError, NumericError
from mtdnn.gradcheck import grad_check
from mtdnn.tensor import EmbeddingIndexError, Tensor, backward


def leaf(values):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


def decimal_softmax(values, prec=50):
    getcontext().prec = prec
    exps = [Decimal(repr(float(v))).exp() for v in values]
    total = sum(exps)
    return [float(e / total) for e in exps]


def triple_loop_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


# -- elementwise ---------------------------------------------------------
def test_add_identity():
    assert T.add(leaf([1, 2]), leaf([0, 0])).data.tolist() == [1, 2]


def test_abs_and_sign_subgradient():
    x = leaf([-3.0, 3.0, 0.0])
    y = T.abs_(x)
    assert y.data.tolist() == [3, 3, 0]
    backward(T.sum_(y))
    assert x.grad.tolist() == [-1, 1, 0]


def test_mul_product_rule():
    a, b = leaf([2.0, 3.0]), leaf([4.0, 5.0])
    y = T.mul(a, b)
    assert y.data.tolist() == [8, 15]
    backward(T.sum_(y))
    assert a.grad.tolist() == [4, 5]
    assert b.grad.tolist() == [2, 3]


def test_scale_and_sub():
    a, b = leaf([1.0, -2.0]), leaf([0.5, 0.5])
    y = T.sub(T.scale(a, 3.0), b)
    np.testing.assert_array_equal(y.data, [2.5, -6.5])
    backward(T.sum_(y))
    assert a.grad.tolist() == [3, 3]
    assert b.grad.tolist() == [-1, -1]


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2,\).*\(3,\)"):
        T.add(leaf([1, 2]), leaf([1, 2, 3]))


def test_scalar_constant_operand():
    x = leaf([1.0, 2.0])
    np.testing.assert_array_equal(T.add(x, 1.5).data, [2.5, 3.5])
    np.testing.assert_array_equal(T.mul(x, 2).data, [2.0, 4.0])


# -- matmul --------------------------------------------------------------
def test_matmul_identity_and_projector():
    m = leaf([[1, 2], [3, 4]])
    np.testing.assert_array_equal(T.matmul(leaf(np.eye(2)), m).data, [[1, 2], [3, 4]])
    p = T.matmul(leaf([[1, 0], [0, 0]]), leaf([[5], [7]]))
    np.testing.assert_array_equal(p.data, [[5], [0]])


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(T.matmul(leaf(a), leaf(b)).data, triple_loop_matmul(a, b), rtol=0, atol=1e-12)


def test_matmul_backward_formulas():
    rng = np.random.default_rng(1)
    a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
    g = rng.normal(size=(3, 2))
    backward(T.sum_(T.mul(T.matmul(a, b), Tensor(g))))
    np.testing.assert_allclose(a.grad, g @ b.data.T, atol=1e-12)
    np.testing.assert_allclose(b.grad, a.data.T @ g, atol=1e-12)


def test_matmul_inner_mismatch():
    with pytest.raises(DimensionError):
        T.matmul(leaf(np.ones((2, 3))), leaf(np.ones((2, 3))))


# -- softmax family --------------------------------------------------------
def test_softmax_symmetry_and_overflow():
    np.testing.assert_array_equal(T.softmax(leaf([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_array_equal(T.softmax(leaf([1000.0, 1000.0])).data, [0.5, 0.5])


def test_softmax_matches_extended_precision():
    np.testing.assert_allclose(T.softmax(leaf([1.0, 2.0, 3.0])).data, decimal_softmax([1, 2, 3]), rtol=0, atol=1e-12)


def test_softmax_empty_axis():
    with pytest.raises(DimensionError):
        T.softmax(leaf(np.zeros((2, 0))))


def test_softmax_other_axis():
    x = np.random.default_rng(2).normal(size=(3, 4))
    y = T.softmax(leaf(x), axis=0).data
    np.testing.assert_allclose(y.sum(axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(y[:, 1], decimal_softmax(x[:, 1]), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 8)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_softmax_rows_sum_to_one(x):
    y = T.softmax(Tensor(x)).data
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, rtol=0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 5, elements=st.floats(-30, 30)), st.floats(-50, 50))
def test_log_softmax_shift_invariant_and_consistent(x, c):
    a = T.log_softmax(Tensor(x)).data
    b = T.log_softmax(Tensor(x + c)).data
    np.testing.assert_allclose(a, b, atol=1e-10)
    np.testing.assert_allclose(np.exp(a), T.softmax(Tensor(x)).data, atol=1e-12)


# -- layer norm ------------------------------------------------------------
def test_layer_norm_constant_row_is_zero():
    y = T.layer_norm(leaf([[2.0, 2.0, 2.0]]), leaf(np.ones(3)), leaf(np.zeros(3)), 1e-12)
    np.testing.assert_array_equal(y.data, [[0, 0, 0]])


def test_layer_norm_two_values():
    y = T.layer_norm(leaf([1.0, 3.0]), leaf(np.ones(2)), leaf(np.zeros(2)), 1e-300)
    np.testing.assert_allclose(y.data, [-1.0, 1.0], atol=1e-15)


def test_layer_norm_moments():
    x = np.random.default_rng(3).normal(3.0, 2.0, size=(1, 16))
    y = T.layer_norm(leaf(x), leaf(np.ones(16)), leaf(np.zeros(16)), 1e-5).data
    assert abs(y.mean()) < 1e-10
    v = x.var()
    assert abs(y.var() - v / (v + 1e-5)) < 1e-12


def test_layer_norm_shape_errors():
    with pytest.raises(DimensionError):
        T.layer_norm(leaf(np.zeros((2, 0))), leaf(np.ones(0)), leaf(np.zeros(0)))
    with pytest.raises(DimensionError):
        T.layer_norm(leaf(np.zeros((2, 3))), leaf(np.ones(2)), leaf(np.zeros(3)))


# -- embedding and dropout ---------------------------------------------------
def test_embedding_rows_and_scatter_add():
    table = leaf(np.arange(12.0).reshape(4, 3))
    np.testing.assert_array_equal(T.embedding(table, [0]).data, [[0, 1, 2]])
    out = T.embedding(table, [2, 2])
    backward(T.sum_(T.mul(out, Tensor([[1.0, 2.0, 3.0], [10.0, 20.0, 30.0]]))))
    np.testing.assert_array_equal(table.grad[2], [11, 22, 33])
    assert not table.grad[[0, 1, 3]].any()


def test_embedding_empty_and_out_of_range():
    table = leaf(np.ones((4, 3)))
    assert T.embedding(table, []).shape == (0, 3)
    with pytest.raises(EmbeddingIndexError, match="7"):
        T.embedding(table, [1, 7])
    with pytest.raises(IndexError):
        T.embedding(table, [-1])


def test_dropout_identities():
    x = leaf(np.ones(10))
    rng = np.random.default_rng(0)
    assert T.dropout(x, 0.0, True, rng) is x
    assert T.dropout(x, 0.7, False, rng) is x


def test_dropout_expectation():
    y = T.dropout(Tensor(np.ones(100_000)), 0.5, True, np.random.default_rng(0)).data
    assert abs(y.mean() - 1.0) < 0.02
    assert set(np.unique(y)) <= {0.0, 2.0}


def test_dropout_rejects_p_one():
    with pytest.raises(ConfigError):
        T.dropout(leaf([1.0]), 1.0, True, np.random.default_rng(0))


# -- activations -----------------------------------------------------------
def test_gelu_uses_exact_erf():
    xs = [-2.0, -0.5, 0.0, 0.3, 1.7]
    want = [0.5 * v * (1 + math.erf(v / math.sqrt(2))) for v in xs]
    np.testing.assert_allclose(T.gelu(leaf(xs)).data, want, atol=1e-15)


def test_sigmoid_and_tanh_values():
    np.testing.assert_allclose(T.sigmoid(leaf([0.0, 1.0])).data, [0.5, 1 / (1 + math.exp(-1))], atol=1e-15)
    np.testing.assert_allclose(T.tanh(leaf([0.5])).data, [math.tanh(0.5)], atol=1e-15)


def test_log_floor_keeps_value_finite():
    assert np.isfinite(T.log(leaf([0.0]), floor=1e-12).data).all()


# -- backward semantics ------------------------------------------------------
def test_sum_of_squares_gradient():
    x = leaf([1.0, 2.0])
    backward(T.sum_(T.mul(x, x)))
    assert x.grad.tolist() == [2, 4]


def test_constant_loss_gives_zero_grads():
    x = leaf([1.0, 2.0])
    backward(T.add(T.scale(T.sum_(x), 0.0), 3.0))
    assert x.grad.tolist() == [0, 0]


def test_repeated_backward_accumulates():
    x = leaf([1.0, 2.0])
    backward(T.sum_(T.mul(x, x)))
    backward(T.sum_(T.mul(x, x)))
    assert x.grad.tolist() == [4, 8]
    x.zero_grad()
    assert x.grad.tolist() == [0, 0]


def test_backward_contract_errors():
    with pytest.raises(ContractError):
        backward(T.mul(leaf([1.0, 2.0]), 2.0))
    with pytest.raises(GraphError):
        backward(Tensor(1.0))
    with T.no_grad():
        detached = T.sum_(leaf([1.0]))
    with pytest.raises(GraphError):
        backward(detached)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_result_is_reported():
    with pytest.raises(NumericError):
        T.exp(leaf([1000.0]))
    with pytest.raises(NumericError):
        T.log(leaf([0.0]))


def test_only_leaves_hold_gradients():
    x = leaf([1.0, 2.0])
    mid = T.mul(x, x)
    backward(T.sum_(mid))
    assert mid.grad is None or not np.any(mid.grad)


def test_backward_linearity():
    rng = np.random.default_rng(5)
    x = leaf(rng.normal(size=(3, 4)))

    def grad_of(fn):
        x.zero_grad()
        backward(fn())
        return x.grad.copy()

    f = lambda: T.sum_(T.tanh(x))  # noqa: E731
    g = lambda: T.sum_(T.softmax(x))  # noqa: E731
    combined = grad_of(lambda: T.add(T.scale(f(), 2.5), T.scale(g(), -0.75)))
    np.testing.assert_allclose(combined, 2.5 * grad_of(f) - 0.75 * grad_of(g), atol=1e-10)


def test_getitem_concat_stack_roundtrip():
    x = leaf(np.arange(6.0).reshape(2, 3))
    parts = [x[0], x[1]]
    np.testing.assert_array_equal(T.stack(parts).data, x.data)
    np.testing.assert_array_equal(T.concat([x[:, :1], x[:, 1:]], axis=1).data, x.data)
    backward(T.sum_(T.stack([x[0], x[0]])))
    np.testing.assert_array_equal(x.grad, [[2, 2, 2], [0, 0, 0]])


# -- gradient checker ----------------------------------------------------------
def test_grad_check_quadratic_is_exact():
    x = leaf([0.3, -1.2, 2.0])
    report = grad_check(lambda: T.sum_(T.mul(x, x)), x, tol=1e-6)
    assert report.passed and report.n_checked == 3


def test_grad_check_softmax_cross_entropy():
    z = leaf([0.2, -0.4, 1.1])
    report = grad_check(lambda: T.neg(T.getitem(T.log_softmax(z), 1)), z)
    assert report.max_rel_error < 1e-6


def test_grad_check_flags_wrong_gradient():
    x = leaf([0.5, 1.5])

    def bad_square():
        y = T.mul(x, x)
        return T.sum_(Tensor(y.data, requires_grad=False) + T.scale(x, 1.0))

    assert not grad_check(bad_square, x, tol=1e-4).passed


def test_grad_check_rejects_bad_inputs():
    x = leaf([1.0])
    with pytest.raises(ValueError):
        grad_check(lambda: T.sum_(x), x, h=0.0)
    with pytest.raises(NumericError):
        grad_check(lambda: T.sum_(T.scale(x, float("inf"))), x)


def test_graph_replay_is_bitwise_across_processes():
    script = (
        "import numpy as np\n"
        "from mtdnn import tensor as T\n"
        "from mtdnn.rng import stream\n"
        "r = stream(9, 'init'); x = T.Tensor(r.normal(size=(4, 5)), requires_grad=True)\n"
        "y = T.dropout(T.softmax(T.gelu(x)), 0.3, True, stream(9, 'dropout', 0))\n"
        "T.backward(T.sum_(T.mul(y, y)))\n"
        "print(y.data.tobytes().hex() + x.grad.tobytes().hex())\n"
    )
    runs = [subprocess.run([sys.executable, "-c", script], capture_output=True, text=True, check=True).stdout
            for _ in range(2)]
    assert runs[0] == runs[1] and len(runs[0]) > 100
