import numpy as np
import pytest

from resnextkit import autograd
from resnextkit.autograd import (
    Variable, add, add_n, backward, concat_channels, constant,
    finite_diff_gradient, mul, param, relative_error, split_channels,
    sum_all, zero_grads,
)
from resnextkit.tensor import ShapeError


def rand(shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


def check_grads(build, arrays, tol=1e-3, eps=1e-3):
    """Compare backward() grads of every input against finite differences.

    build takes len(arrays) Variables and returns a scalar Variable.
    """
    variables = [param(a.copy()) for a in arrays]
    out = build(*variables)
    backward(out)
    for i, (v, a) in enumerate(zip(variables, arrays)):
        assert v.grad is not None, f"input {i} received no gradient"

        def f(z, i=i):
            vs = [param(arrays[j].copy() if j != i else z.copy()) for j in range(len(arrays))]
            return float(build(*vs).value)

        fd = finite_diff_gradient(f, a, eps=eps)
        err = relative_error(v.grad, fd)
        assert err <= tol, f"input {i}: rel err {err:.3g} > {tol}"


SHAPES_4D = [(1, 1, 2, 2), (2, 3, 4, 4), (3, 2, 1, 5)]


def test_requires_grad_propagates():
    p = param(rand((1, 1, 2, 2)))
    c = constant(rand((1, 1, 2, 2)))
    assert add(p, c).requires_grad
    assert not add(c, constant(rand((1, 1, 2, 2)))).requires_grad


def test_constant_receives_no_gradient():
    p = param(rand((1, 1, 2, 2), 1))
    c = constant(rand((1, 1, 2, 2), 2))
    backward(sum_all(mul(p, c)))
    assert p.grad is not None
    assert c.grad is None


def test_backward_requires_scalar_root():
    p = param(rand((1, 1, 2, 2)))
    with pytest.raises(ValueError):
        backward(add(p, p))


def test_backward_twice_raises():
    p = param(rand((1, 1, 2, 2)))
    out = sum_all(p)
    backward(out)
    with pytest.raises(RuntimeError):
        backward(out)


def test_gradients_accumulate_across_reuse():
    # y = sum(x*x + x); dy/dx = 2x + 1, exercising both same-op reuse and
    # cross-op accumulation into one leaf.
    x = param(rand((2, 2, 3, 3), 5))
    backward(sum_all(add(mul(x, x), x)))
    assert np.allclose(x.grad, 2 * x.value + 1, atol=1e-12)


def test_zero_grads_clears():
    x = param(rand((1, 1, 2, 2)))
    backward(sum_all(x))
    assert x.grad is not None
    zero_grads([x])
    assert x.grad is None


def test_backward_returns_leaf_grads_by_id():
    a = param(rand((1, 1, 2, 2), 1))
    b = param(rand((1, 1, 2, 2), 2))
    grads = backward(sum_all(add(a, b)))
    assert set(grads) == {id(a), id(b)}
    assert np.array_equal(grads[id(a)], a.grad)


def test_deep_chain_no_recursion_limit():
    x = param(np.ones((1, 1, 1, 1)))
    h = x
    for _ in range(3000):
        h = add(h, x)
    backward(sum_all(h))
    assert float(x.grad.sum()) == 3001.0


def test_finite_diff_on_quadratic():
    x = rand((7,), 3)
    fd = finite_diff_gradient(lambda z: float((z ** 2).sum()), x)
    assert relative_error(fd, 2 * x) <= 1e-9


def test_finite_diff_rejects_bad_eps_and_nonfinite():
    with pytest.raises(ValueError):
        finite_diff_gradient(lambda z: 0.0, np.ones(2), eps=0.0)
    with pytest.raises(FloatingPointError):
        finite_diff_gradient(lambda z: float("nan"), np.ones(2))


def test_relative_error_properties():
    assert relative_error(np.ones(3), np.ones(3)) == 0.0
    assert relative_error(np.array([1.0]), np.array([1.001])) == pytest.approx(1e-3, rel=1e-2)
    # tiny denominators are floored so exact zeros compare clean
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0


@pytest.mark.parametrize("shape", SHAPES_4D)
def test_add_gradcheck(shape):
    check_grads(lambda a, b: sum_all(add(a, b)), [rand(shape, 1), rand(shape, 2)])


def test_add_shape_mismatch():
    with pytest.raises(ShapeError):
        add(param(rand((1, 1, 2, 2))), param(rand((1, 2, 2, 2))))


@pytest.mark.parametrize("shape", SHAPES_4D)
def test_add_n_gradcheck(shape):
    arrays = [rand(shape, s) for s in (1, 2, 3, 4)]
    check_grads(lambda *vs: sum_all(add_n(vs)), arrays)


@pytest.mark.parametrize("shape", [(2, 3), (1, 1, 2, 2), (5,)])
def test_mul_gradcheck(shape):
    # weight the product so each element's gradient is distinct
    r = constant(rand(shape, 9))
    check_grads(lambda a, b: sum_all(mul(mul(a, b), r)), [rand(shape, 1), rand(shape, 2)])


@pytest.mark.parametrize("shape", [(3,), (2, 4), (2, 2, 3, 3)])
def test_sum_all_gradcheck(shape):
    check_grads(lambda a: sum_all(a), [rand(shape, 4)])


def test_sum_all_value():
    x = rand((2, 3), 8)
    out = sum_all(param(x))
    assert out.value.shape == ()
    assert float(out.value) == pytest.approx(float(x.sum()), rel=1e-12)


@pytest.mark.parametrize("sizes", [(1, 1), (2, 3, 1), (4, 2, 2)])
def test_concat_channels_gradcheck(sizes):
    arrays = [rand((2, c, 3, 3), i) for i, c in enumerate(sizes)]
    r = constant(rand((2, sum(sizes), 3, 3), 42))
    check_grads(lambda *vs: sum_all(mul(concat_channels(vs), r)), arrays)


@pytest.mark.parametrize("sizes", [(1, 1), (2, 3, 1), (3, 3)])
def test_split_channels_gradcheck(sizes):
    total = sum(sizes)

    def build(a):
        parts = split_channels(a, sizes)
        scalars = [sum_all(mul(p, constant(rand(p.value.shape, 50 + i))))
                   for i, p in enumerate(parts)]
        out = scalars[0]
        for s in scalars[1:]:
            out = add(out, s)
        return out

    check_grads(build, [rand((2, total, 2, 2), 6)])


def test_split_unused_part_contributes_zero():
    x = param(rand((1, 4, 2, 2), 3))
    first, second = split_channels(x, [2, 2])
    backward(sum_all(first))
    assert np.allclose(x.grad[:, :2], 1.0)
    assert np.allclose(x.grad[:, 2:], 0.0)


def test_concat_split_round_trip_through_graph():
    x = rand((2, 6, 2, 2), 11)
    v = param(x)
    parts = split_channels(v, [2, 4])
    merged = concat_channels(parts)
    assert np.array_equal(merged.value, x)
    backward(sum_all(merged))
    assert np.allclose(v.grad, 1.0)
