import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from deepdds import tensor as T
from deepdds.tensor import EmptyInput, NotScalar, ShapeMismatch, Tensor, backward, no_grad

from .helpers import check_gradients, leaf


def test_matmul_examples():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal((Tensor(np.eye(2)) @ Tensor(m)).data, m)
    np.testing.assert_array_equal((Tensor(m) @ Tensor([[1.0], [1.0]])).data, [[3.0], [7.0]])
    with pytest.raises(ShapeMismatch):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 2)))


def test_elementwise_examples():
    np.testing.assert_array_equal(T.relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])
    assert T.elu(Tensor(0.0)).item() == 0.0
    assert T.elu(Tensor(-1.0)).item() == pytest.approx(math.exp(-1) - 1, abs=1e-15)
    assert T.elu(Tensor(-1.0)).item() == pytest.approx(-0.6321, abs=1e-4)
    assert T.sigmoid(Tensor(0.0)).item() == 0.5
    with pytest.raises(ShapeMismatch):
        Tensor(np.ones((2, 3))) + Tensor(np.ones(2))
    with pytest.raises(ShapeMismatch):
        Tensor(np.ones((2, 3))) * Tensor(np.ones((3, 2)))


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])
    out = T.softmax_rows(Tensor([[1000.0, 0.0]])).data
    assert np.isfinite(out).all() and out[0, 0] == pytest.approx(1.0) and out[0, 1] == pytest.approx(0.0)
    np.testing.assert_allclose(T.softmax_rows(Tensor([[0.0, math.log(3.0)]])).data, [[0.25, 0.75]], atol=1e-15)


def test_reduce_examples():
    np.testing.assert_array_equal(T.max_over_rows(Tensor([[1.0, 5.0], [3.0, 2.0]])).data, [3.0, 5.0])
    assert T.reduce_sum(Tensor([1.0, 2.0, 3.0])).item() == 6.0
    np.testing.assert_array_equal(T.reduce_mean(Tensor([4.0, 5.0])).item(), 4.5)
    with pytest.raises(EmptyInput):
        T.max_over_rows(Tensor(np.zeros((0, 3))))
    with pytest.raises(EmptyInput):
        T.reduce_sum(Tensor(np.zeros(0)))


def test_backward_examples():
    x = Tensor(3.0, requires_grad=True)
    (x * x).backward()
    assert x.grad == 6.0

    x = Tensor([-1.0, 2.0], requires_grad=True)
    T.relu(x).sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])

    y = Tensor(1.5, requires_grad=True)
    (y + y).backward()
    assert y.grad == 2.0


def test_backward_needs_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(NotScalar):
        backward(x * 2.0)


def test_relu_gradient_zero_at_zero():
    x = Tensor([0.0], requires_grad=True)
    T.relu(x).sum().backward()
    assert x.grad[0] == 0.0


def test_max_over_rows_first_index_wins_ties():
    x = Tensor([[2.0, 1.0], [2.0, 3.0]], requires_grad=True)
    T.max_over_rows(x).sum().backward()
    np.testing.assert_array_equal(x.grad, [[1.0, 0.0], [0.0, 1.0]])


def test_no_grad_records_nothing():
    w = Tensor([1.0], requires_grad=True)
    with no_grad():
        out = w * 2.0
    assert not out.requires_grad and out._backward is None


def test_gradients_accumulate_across_backward_calls():
    w = Tensor(2.0, requires_grad=True)
    (w * 3.0).backward()
    (w * 3.0).backward()
    assert w.grad == 6.0


# -- gradient checks ---------------------------------------------------------

def _op_cases(rng):
    m, k, n = rng.integers(1, 5, size=3)
    a, b = leaf(rng, m, k), leaf(rng, k, n)
    v, row = leaf(rng, m, n), leaf(rng, n)
    p = Tensor(rng.uniform(0.5, 2.0, size=(m, n)), requires_grad=True)
    s = leaf(rng, m)
    segs = rng.integers(0, 3, size=m)
    adj = sp.random(m, m, density=0.5, random_state=int(rng.integers(1 << 30)), format="csr")
    offsets = [(0, int(m))]
    labels = rng.integers(0, n, size=m)
    cv = leaf(rng, k)
    return {
        "matmul": (lambda: (a @ b).sum() * 1.0 + ((a @ b) * (a @ b)).sum(), [a, b]),
        "matvec": (lambda: ((a @ cv) * (a @ cv)).sum(), [a, cv]),
        "add_row": (lambda: ((v + row) * (v + row)).sum(), [v, row]),
        "sub": (lambda: ((v - row) * v).sum(), [v, row]),
        "mul": (lambda: (v * p * v).sum(), [v, p]),
        "relu": (lambda: (T.relu(v) * v).sum(), [v]),
        "elu": (lambda: (T.elu(v) * v).sum(), [v]),
        "exp": (lambda: T.exp(v).sum(), [v]),
        "log": (lambda: (T.log(p) * p).sum(), [p]),
        "sigmoid": (lambda: (T.sigmoid(v) * v).sum(), [v]),
        "softmax": (lambda: (T.softmax_rows(v) * p).sum(), [v, p]),
        "mean": (lambda: (v * v).mean(), [v]),
        "max_over_rows": (lambda: (T.max_over_rows(v) * row).sum(), [v, row]),
        "segment_max": (lambda: (T.segment_max(v, offsets) * row).sum(), [v, row]),
        "concat": (lambda: (T.concat([v, a]) * T.concat([v, a])).sum(), [v, a]),
        "getitem": (lambda: (v[np.array([0] * 2 + list(range(int(m))))] * 1.5).sum() + (v[:1] * v[:1]).sum(), [v]),
        "scale_rows": (lambda: (T.scale_rows(v, s) * v).sum(), [v, s]),
        "pick": (lambda: (T.pick(T.softmax_rows(v), labels) * 2.0).sum(), [v]),
        "spmm": (lambda: (T.spmm(adj, v) * v).sum(), [v]),
        "segment_softmax": (lambda: (T.segment_softmax(s, segs, 3) * s).sum(), [s]),
    }


@pytest.mark.parametrize("name", list(_op_cases(np.random.default_rng(0))))
@pytest.mark.parametrize("seed", range(20))
def test_op_gradients_match_finite_differences(name, seed):
    rng = np.random.default_rng(seed)
    build, params = _op_cases(rng)[name]
    assert check_gradients(build, params) <= 1e-4


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=8),
                  elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    out = T.softmax_rows(Tensor(x)).data
    np.testing.assert_allclose(out.sum(axis=1), 1.0, rtol=0, atol=1e-12)


def test_determinism():
    def run():
        rng = np.random.default_rng(7)
        a, b = leaf(rng, 3, 4), leaf(rng, 4, 2)
        loss = T.softmax_rows(T.elu(a @ b)).sum() + (a * a).mean()
        loss.backward()
        return loss.item(), a.grad.tobytes(), b.grad.tobytes()

    assert run() == run()
