import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metagrad import primitives as P
from metagrad.autodiff import jvp, vjp
from metagrad.primitives import PRIMITIVES, eval_primitive
from metagrad.tensor import (
    NondifferentiableError,
    PowDomainError,
    ShapeError,
    Tensor,
    check_shape,
)


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = eval_primitive("matmul", [a, Tensor(np.eye(2))])
    np.testing.assert_array_equal(out.data, a.data)


def test_sin_known_values():
    out = eval_primitive("sin", [Tensor([0.0, math.pi / 2])])
    np.testing.assert_allclose(out.data, [0.0, 1.0], atol=1e-15)


def test_toy_map_scalar():
    value = float(P.pow(2.0 + P.sin(Tensor(1.0)), P.cos(Tensor(1.0))))
    # Independent evaluation with the math module.
    assert value == pytest.approx((2 + math.sin(1)) ** math.cos(1), rel=1e-15)
    assert value == pytest.approx(1.75838, abs=3e-4)


def test_every_kind_is_registered():
    expected = {
        "add", "sub", "mul", "div", "neg", "sin", "cos", "exp", "log", "pow", "matmul", "sum",
        "mean", "broadcast", "transpose", "reshape", "select", "sigmoid", "square-error-reduce",
    }
    assert set(PRIMITIVES) == expected


def test_shape_errors():
    with pytest.raises(ShapeError):
        P.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        P.add(Tensor(np.ones(2)), Tensor(np.ones(3)))
    with pytest.raises(ShapeError):
        P.broadcast(Tensor(np.ones(3)), (2, 2))
    with pytest.raises(ShapeError):
        Tensor(np.ones((1, 1, 1, 1, 1)))
    with pytest.raises(ShapeError):
        check_shape((2, -1))


def test_pow_domain():
    with pytest.raises(PowDomainError):
        P.pow(Tensor([-1.0]), Tensor([0.5]))
    # Integer exponents of negative bases are fine.
    assert float(P.pow(Tensor(-2.0), 3.0)) == -8.0


def test_pow_nondifferentiable_at_zero():
    with pytest.raises(NondifferentiableError):
        jvp(lambda x: P.pow(x, 0.5), (Tensor(0.0),), (Tensor(1.0),))


def test_log_domain():
    with pytest.raises(ValueError):
        P.log(Tensor([0.0]))


def test_tensors_are_immutable():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_determinism_bit_identical():
    rng = np.random.default_rng(0)
    a, b = Tensor(rng.normal(size=(5, 4))), Tensor(rng.normal(size=(4, 3)))

    def expr():
        return P.sum(P.sin(P.matmul(a, b)) * P.exp(P.mean(a)))

    assert expr().data.tobytes() == expr().data.tobytes()


def test_reshape_and_transpose_roundtrip():
    x = Tensor(np.arange(24.0).reshape(2, 3, 4))
    back = P.reshape(P.reshape(x, (6, 4)), (2, 3, 4))
    np.testing.assert_array_equal(back.data, x.data)
    perm = (2, 0, 1)
    inv = tuple(np.argsort(perm))
    np.testing.assert_array_equal(P.transpose(P.transpose(x, perm), inv).data, x.data)


def test_select_and_square_error():
    out = P.select(Tensor([1.0, 0.0]), Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
    np.testing.assert_array_equal(out.data, [1.0, 4.0])
    assert float(P.square_error(Tensor([1.0, 3.0]), Tensor([0.0, 1.0]))) == 2.5


# -- tangent/cotangent duality for every primitive --------------------------------

def _cases(rng):
    def arr(*shape, positive=False):
        x = rng.normal(size=shape)
        return Tensor(np.abs(x) + 0.5 if positive else x)

    return {
        "add": (lambda a, b: P.add(a, b), [arr(3, 2), arr(3, 2)]),
        "sub": (lambda a, b: P.sub(a, b), [arr(4), arr()]),
        "mul": (lambda a, b: P.mul(a, b), [arr(2, 3), arr(2, 3)]),
        "div": (lambda a, b: P.div(a, b), [arr(3), arr(3, positive=True)]),
        "neg": (P.neg, [arr(2, 2)]),
        "sin": (P.sin, [arr(5)]),
        "cos": (P.cos, [arr(5)]),
        "exp": (P.exp, [arr(2, 2)]),
        "log": (P.log, [arr(4, positive=True)]),
        "pow": (lambda a, b: P.pow(a, b), [arr(3, positive=True), arr(3)]),
        "matmul": (P.matmul, [arr(2, 3), arr(3, 4)]),
        "sum": (lambda a: P.sum(a, 1), [arr(2, 3, 2)]),
        "mean": (lambda a: P.mean(a, (0, 2)), [arr(2, 3, 2)]),
        "broadcast": (lambda a: P.broadcast(a, (3, 2, 4)), [arr(2, 1)]),
        "transpose": (lambda a: P.transpose(a, (1, 2, 0)), [arr(2, 3, 4)]),
        "reshape": (lambda a: P.reshape(a, (6, 2)), [arr(3, 4)]),
        "select": (lambda a, b: P.select(Tensor([1.0, 0.0, 1.0]), a, b), [arr(3), arr(3)]),
        "sigmoid": (P.sigmoid, [arr(4)]),
        "square-error-reduce": (P.square_error, [arr(3, 2), arr(3, 2)]),
    }


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), kind=st.sampled_from(sorted(PRIMITIVES)))
def test_jvp_vjp_duality(seed, kind):
    rng = np.random.default_rng(seed)
    f, args = _cases(rng)[kind]
    tangents = [Tensor(rng.normal(size=a.shape)) for a in args]
    out, jv = jvp(f, tuple(args), tuple(tangents))
    u = Tensor(rng.normal(size=out.shape))
    _, pullback, _ = vjp(f, *args)
    cts = pullback(u)
    lhs = float(np.sum(u.data * jv.data))
    rhs = sum(float(np.sum(c.data * t.data)) for c, t in zip(cts, tangents))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)
