import threading

import numpy as np
import pytest

from lir import tensor as T
from lir.gradcheck import grad_check
from lir.tensor import NonFiniteError, Tensor, backward, no_grad

from conftest import t64


def test_sum_of_squares_grad_is_2x(rng):
    x = t64(rng.standard_normal((3, 4)))
    backward(T.sum_(T.square(x)))
    np.testing.assert_array_equal(x.grad, 2 * x.data)


def test_two_consumers_accumulate():
    x = t64([1.5, -2.0])
    backward(T.sum_(x + x))
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])


def test_diamond_graph_visits_each_node_once():
    x = t64([3.0])
    y = x * 2.0
    z = y * y + y  # y used twice
    backward(T.sum_(z))
    # dz/dx = (2y + 1) * 2 at y=6
    assert x.grad[0] == 26.0


def test_second_backward_raises():
    x = t64([1.0, 2.0])
    loss = T.sum_(x * x)
    backward(loss)
    with pytest.raises(RuntimeError, match="consumed"):
        backward(loss)


def test_backward_needs_scalar():
    x = t64([1.0, 2.0])
    with pytest.raises(ValueError):
        backward(x * 2.0)


def test_no_grad_records_nothing():
    x = t64([1.0])
    with no_grad():
        y = x * 3.0
    assert y._node is None and not y.requires_grad


def test_no_grad_is_thread_local():
    seen = []
    x = t64([1.0])

    def worker():
        seen.append((x * 2.0).requires_grad)

    with no_grad():
        th = threading.Thread(target=worker)
        th.start()
        th.join()
    assert seen == [True]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_output_is_an_error():
    x = Tensor(np.array([1e308]))
    with pytest.raises(NonFiniteError):
        x * 1e10


def test_sigmoid_zero_is_half():
    assert T.sigmoid(Tensor(np.zeros(1))).item() == 0.5


def test_float32_scalar_ops_stay_float32():
    x = Tensor(np.ones(3, np.float32))
    assert (1.0 - x).dtype == np.float32
    assert (x * 2.0).dtype == np.float32


def test_repeated_forward_bit_identical(rng):
    a = rng.standard_normal((8, 8))
    f = lambda: T.sigmoid(T.matmul(Tensor(a), Tensor(a))).data
    np.testing.assert_array_equal(f(), f())


def test_gradcheck_quadratic():
    x = t64([0.3, -1.2, 2.0])
    assert grad_check(lambda: T.sum_(T.square(x) * 3.0 + x), [x]) < 1e-8


def test_gradcheck_rejects_float32():
    x = Tensor(np.ones(2, np.float32), requires_grad=True)
    with pytest.raises(TypeError):
        grad_check(lambda: T.sum_(x), [x])


# -- per-op finite-difference suite (64-bit) --------------------------------

def _weights(shape, seed=7):
    return Tensor(np.random.default_rng(seed).standard_normal(shape))


def _ops(rng):
    a = t64(rng.standard_normal((3, 4)))
    b = t64(rng.standard_normal((3, 4)))
    row = t64(rng.standard_normal((4,)))
    img = t64(rng.standard_normal((2, 3, 4, 4)))
    m = t64(rng.standard_normal((4, 5)))
    away = t64(rng.uniform(0.2, 1.0, (3, 4)) * rng.choice([-1, 1], (3, 4)))
    r34 = _weights((3, 4))
    cases = {
        "add": (lambda: T.sum_((a + b) * r34), [a, b]),
        "add_broadcast": (lambda: T.sum_((a + row) * r34), [a, row]),
        "sub": (lambda: T.sum_((a - b) * r34), [a, b]),
        "mul": (lambda: T.sum_(a * b * r34), [a, b]),
        "scale": (lambda: T.sum_(T.scale(a, -2.5) * r34), [a]),
        "relu": (lambda: T.sum_(T.relu(away) * r34), [away]),
        "sigmoid": (lambda: T.sum_(T.sigmoid(a) * r34), [a]),
        "abs": (lambda: T.sum_(T.abs_(away) * r34), [away]),
        "square": (lambda: T.sum_(T.square(a) * r34), [a]),
        "mean_axis": (lambda: T.sum_(T.mean(a, axis=1) * _weights((3,))), [a]),
        "sum_axis": (lambda: T.sum_(T.sum_(a, axis=0, keepdims=True) * _weights((1, 4))), [a]),
        "gap": (lambda: T.sum_(T.global_average_pool(img) * _weights((2, 3, 1, 1))), [img]),
        "reshape": (lambda: T.sum_(T.reshape(a, (4, 3)) * _weights((4, 3))), [a]),
        "transpose": (lambda: T.sum_(T.transpose(img, (0, 2, 3, 1)) * _weights((2, 4, 4, 3))), [img]),
        "getitem": (lambda: T.sum_(img[:, 1:, ::2] * _weights((2, 2, 2, 4))), [img]),
        "concat": (lambda: T.sum_(T.concat([a, b], axis=1) * _weights((3, 8))), [a, b]),
        "matmul": (lambda: T.sum_(T.matmul(a, m) * _weights((3, 5))), [a, m]),
    }
    return cases


@pytest.mark.parametrize("name", sorted(_ops(np.random.default_rng(0))))
def test_per_op_gradcheck(name):
    fn, params = _ops(np.random.default_rng(3))[name]
    assert grad_check(fn, params) < 1e-6
