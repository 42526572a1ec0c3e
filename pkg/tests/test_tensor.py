import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import hgnn_space.tensor as T
from hgnn_space.tensor import (BatchNormState, IndexPlan, Parameter,
                               SegmentIndex, Tensor, TensorError, grad_check)

TOL = 1e-4


def param(rng, *shape, name="p"):
    return Parameter(rng.standard_normal(shape), name)


# ---------------------------------------------------------------------------
# frozen forward examples
# ---------------------------------------------------------------------------

def test_row_softmax_symmetry():
    out = T.row_softmax(Tensor([[0.0, 0.0]]))
    assert out.data.tolist() == [[0.5, 0.5]]
    rows = T.row_softmax(Tensor(np.random.default_rng(0).standard_normal((5, 7))))
    assert np.allclose(rows.data.sum(axis=1), 1.0, atol=1e-12)


def test_segment_sum_hand_case():
    seg = SegmentIndex([0, 0, 1], 2)
    out = T.segment_sum(Tensor([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]), seg)
    assert out.data.tolist() == [[4.0, 6.0], [5.0, 6.0]]


def test_l2_normalize_345():
    out = T.l2_normalize(Tensor([[3.0, 4.0]]))
    assert np.allclose(out.data, [[0.6, 0.8]])
    zero = T.l2_normalize(Tensor([[0.0, 0.0]]))
    assert zero.data.tolist() == [[0.0, 0.0]]


def test_segment_softmax_sums_and_empty_segments():
    seg = SegmentIndex([0, 0, 2], 4)
    x = Tensor([[1.0], [2.0], [5.0]])
    out = T.segment_softmax(x, seg)
    assert out.data[0, 0] + out.data[1, 0] == pytest.approx(1.0, abs=1e-12)
    assert out.data[2, 0] == pytest.approx(1.0, abs=1e-12)
    empty = T.segment_softmax(Tensor(np.zeros((0, 1))), SegmentIndex([], 3))
    assert empty.data.shape == (0, 1)


def test_segment_index_out_of_range():
    with pytest.raises(TensorError, match="segment index out of range"):
        SegmentIndex([0, 3], 2)


def test_dropout_identity_cases():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert T.dropout(x, 0.0, True, np.random.default_rng(0)) is x
    assert T.dropout(x, 0.7, False) is x
    y = T.dropout(x, 0.5, True, np.random.default_rng(0))
    kept = y.data != 0
    assert np.allclose(y.data[kept], x.data[kept] * 2.0)


def test_batch_norm_training_statistics():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((32, 5)) * 10.0 + 2.0)
    state = BatchNormState(5)
    out = T.batch_norm(x, Tensor(np.ones((1, 5))), Tensor(np.zeros((1, 5))),
                       state, training=True)
    assert np.abs(out.data.mean(axis=0)).max() < 1e-9
    # normalized variance is var / (var + eps); within 1e-6 once var >> eps
    assert np.abs(out.data.var(axis=0) - 1.0).max() < 1e-6
    expect = x.data.var(axis=0) / (x.data.var(axis=0) + state.eps)
    assert np.allclose(out.data.var(axis=0), expect, atol=1e-12)


def test_matmul_shape_errors():
    with pytest.raises(TensorError, match="shape mismatch"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


# ---------------------------------------------------------------------------
# backward machinery
# ---------------------------------------------------------------------------

def test_backward_accumulates_into_parameters():
    rng = np.random.default_rng(0)
    W = param(rng, 3, 4, name="W")
    x = Tensor(rng.standard_normal((2, 3)))
    loss = T.tsum(T.matmul(x, W))
    loss.backward()
    # d sum(xW) / dW = outer-product structure: column sums of x broadcast
    expect = np.repeat(x.data.sum(axis=0)[:, None], 4, axis=1)
    assert np.allclose(W.grad, expect)
    loss2 = T.tsum(T.matmul(x, W))
    loss2.backward()
    assert np.allclose(W.grad, 2 * expect)  # += accumulation


def test_backward_requires_scalar_and_runs_once():
    W = Parameter(np.ones((2, 2)), "W")
    y = T.matmul(Tensor(np.ones((2, 2))), W)
    with pytest.raises(TensorError, match="scalar"):
        y.backward()
    loss = T.tsum(y)
    loss.backward()
    with pytest.raises(TensorError, match="backward called twice"):
        loss.backward()


def test_loss_independent_of_parameter_gives_no_grad():
    W = Parameter(np.ones((2, 2)), "W")
    loss = T.tsum(Tensor(np.ones((2, 2))) * 3.0)
    with pytest.raises(TensorError):
        loss.backward()  # nothing requires grad
    loss2 = T.tsum(W * 0.0 + Tensor(np.ones((2, 2))))
    loss2.backward()
    assert np.allclose(W.grad, 0.0)


# ---------------------------------------------------------------------------
# finite-difference oracle per primitive
# ---------------------------------------------------------------------------

def check(f, params, tol=TOL, rng=None):
    err = grad_check(f, params, rng=rng or np.random.default_rng(0))
    assert err < tol, f"gradient error {err:.3e} exceeds {tol}"


def test_grad_identity_is_exact():
    rng = np.random.default_rng(2)
    p = param(rng, 4, 3)
    assert grad_check(lambda: T.tsum(p), [p]) < 1e-10


def test_grad_linear_layer_tight():
    rng = np.random.default_rng(3)
    W, b = param(rng, 5, 4, name="W"), param(rng, 1, 4, name="b")
    x = Tensor(rng.standard_normal((6, 5)))
    v = rng.standard_normal((6, 4))
    check(lambda: T.tsum(T.mul(T.add(T.matmul(x, W), b), Tensor(v))),
          [W, b], tol=1e-6)


@pytest.mark.parametrize("op", [
    lambda a, b: T.add(a, b),
    lambda a, b: T.sub(a, b),
    lambda a, b: T.mul(a, b),
    lambda a, b: T.maximum(a, b),
])
def test_grad_binary_elementwise(op):
    rng = np.random.default_rng(4)
    a, b = param(rng, 5, 6, name="a"), param(rng, 5, 6, name="b")
    v = rng.standard_normal((5, 6))
    check(lambda: T.tsum(T.mul(op(a, b), Tensor(v))), [a, b])


def test_grad_broadcast_row_and_scalar():
    rng = np.random.default_rng(5)
    a = param(rng, 4, 3, name="a")
    row = param(rng, 1, 3, name="row")
    scal = param(rng, 1, 1, name="s")
    v = rng.standard_normal((4, 3))
    check(lambda: T.tsum(T.mul(T.add(T.mul(a, scal), row), Tensor(v))),
          [a, row, scal])


@pytest.mark.parametrize("unary", [
    T.exp, T.relu, T.tanh, T.sigmoid, T.elu,
    lambda x: T.leaky_relu(x, 0.2),
    T.row_softmax,
    lambda x: T.l2_normalize(x, axis=1),
])
def test_grad_unary(unary):
    rng = np.random.default_rng(6)
    # keep values away from kinks so central differences stay clean
    p = Parameter(rng.standard_normal((5, 4)) + 0.2 * np.sign(rng.standard_normal((5, 4))), "p")
    v = rng.standard_normal((5, 4))
    check(lambda: T.tsum(T.mul(unary(p), Tensor(v))), [p])


def test_grad_log():
    rng = np.random.default_rng(7)
    p = Parameter(rng.random((4, 4)) + 0.5, "p")
    v = rng.standard_normal((4, 4))
    check(lambda: T.tsum(T.mul(T.log(p), Tensor(v))), [p])


def test_grad_prelu():
    rng = np.random.default_rng(8)
    p = param(rng, 6, 3, name="x")
    slope = Parameter(np.array([[0.25]]), "slope")
    v = rng.standard_normal((6, 3))
    check(lambda: T.tsum(T.mul(T.prelu(p, slope), Tensor(v))), [p, slope])


def test_grad_shape_ops():
    rng = np.random.default_rng(9)
    a, b = param(rng, 3, 4, name="a"), param(rng, 2, 4, name="b")
    v = rng.standard_normal((5, 2))

    def f():
        cat = T.concat([a, b], axis=0)          # (5, 4)
        sl = T.narrow(cat, 1, 1, 3)             # (5, 2)
        return T.tsum(T.mul(T.reshape(T.transpose(T.transpose(sl)), (5, 2)),
                            Tensor(v)))

    check(f, [a, b])


def test_grad_gather_take_and_broadcast_to():
    rng = np.random.default_rng(10)
    a = param(rng, 6, 3, name="a")
    idx = np.array([5, 0, 0, 2, 4])
    cols = np.array([0, 2, 1, 1, 0])
    v = rng.standard_normal((5, 1))

    def f():
        rows = T.gather_rows(a, IndexPlan(idx, 6))
        return T.tsum(T.mul(T.take_per_row(rows, cols), Tensor(v)))

    check(f, [a])
    v2 = rng.standard_normal((4, 3))
    check(lambda: T.tsum(T.mul(T.broadcast_to(T.narrow(a, 0, 0, 1), (4, 3)),
                               Tensor(v2))), [a])


@pytest.mark.parametrize("sorted_index", [True, False])
@pytest.mark.parametrize("op", [T.segment_sum, T.segment_mean, T.segment_max,
                                T.segment_softmax])
def test_grad_segment_ops(op, sorted_index):
    rng = np.random.default_rng(11)
    idx = np.array([0, 0, 1, 3, 3, 3]) if sorted_index else np.array([3, 0, 1, 3, 0, 3])
    seg = SegmentIndex(idx, 5)
    a = param(rng, 6, 2, name="a")
    out_rows = 5 if op is not T.segment_softmax else 6
    v = rng.standard_normal((out_rows, 2))
    check(lambda: T.tsum(T.mul(op(a, seg), Tensor(v))), [a])


def test_grad_segment_softmax_chain():
    rng = np.random.default_rng(12)
    seg = SegmentIndex([0, 0, 0, 2, 2], 3)
    a = param(rng, 5, 1, name="logits")
    b = param(rng, 5, 4, name="values")
    v = rng.standard_normal((3, 4))

    def f():
        alpha = T.segment_softmax(a, seg)
        return T.tsum(T.mul(T.segment_sum(T.mul(alpha, b), seg), Tensor(v)))

    check(f, [a, b])


def test_grad_batch_norm_training_and_eval():
    rng = np.random.default_rng(13)
    x = param(rng, 8, 3, name="x")
    gamma = Parameter(np.ones((1, 3)) + 0.1 * rng.standard_normal((1, 3)), "g")
    beta = Parameter(0.1 * rng.standard_normal((1, 3)), "b")
    v = rng.standard_normal((8, 3))

    def run(training):
        state = BatchNormState(3)
        state.running_mean = rng.standard_normal(3) * 0.0  # frozen stats
        return lambda: T.tsum(T.mul(
            T.batch_norm(x, gamma, beta, state, training), Tensor(v)))

    check(run(True), [x, gamma, beta])
    check(run(False), [x, gamma, beta])


def test_grad_random_shapes_all_primitives():
    # sweep over random small shapes, mixing primitives in one expression
    rng = np.random.default_rng(14)
    for trial in range(5):
        n = int(rng.integers(2, 16))
        d = int(rng.integers(1, 16))
        a = Parameter(rng.standard_normal((n, d)), "a")
        W = Parameter(rng.standard_normal((d, d)), "W")
        v = rng.standard_normal((n, d))

        def f():
            h = T.tanh(T.matmul(a, W))
            h = T.l2_normalize(T.add(h, a), axis=1)
            return T.tsum(T.mul(h, Tensor(v)))

        check(f, [a, W], rng=np.random.default_rng(100 + trial))


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=1, max_value=12), st.integers(min_value=1, max_value=8),
       st.integers(min_value=0, max_value=2 ** 31))
def test_row_softmax_rows_sum_to_one(n, d, seed):
    x = np.random.default_rng(seed).standard_normal((n, d)) * 5
    out = T.row_softmax(Tensor(x))
    assert np.abs(out.data.sum(axis=1) - 1.0).max() < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31))
def test_segment_softmax_sums_within_segments(seed):
    rng = np.random.default_rng(seed)
    n_seg = int(rng.integers(1, 6))
    idx = rng.integers(0, n_seg, size=rng.integers(1, 20))
    seg = SegmentIndex(idx, n_seg)
    out = T.segment_softmax(Tensor(rng.standard_normal((idx.size, 1)) * 4), seg)
    sums = np.zeros(n_seg)
    np.add.at(sums, idx, out.data[:, 0])
    present = np.bincount(idx, minlength=n_seg) > 0
    assert np.abs(sums[present] - 1.0).max() < 1e-12
