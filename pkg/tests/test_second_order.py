import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metagrad import primitives as P
from metagrad.autodiff import grad, vjp
from metagrad.meminstr import measure
from metagrad.second_order import HvpMode, dense_hessian, dense_mixed, fwdrev_grad, hvp, mvp
from metagrad.tasks import TASKS, TaskConfig, make_task, toy_map_forward
from metagrad.tensor import ShapeError, SizeExceededError, Tensor
from metagrad.tree import tree_leaves
from metagrad.verify import random_smooth_loss

MODES = list(HvpMode)


def half_sq(x):
    return 0.5 * P.sum(x * x)


@pytest.mark.parametrize("mode", MODES)
def test_hvp_examples(mode):
    x, v = Tensor([0.3, -1.2, 2.0]), Tensor([1.0, 2.0, -3.0])
    np.testing.assert_allclose(hvp(half_sq, x, v, mode).data, v.data, rtol=1e-15)

    out = hvp(lambda z: P.sum(P.sin(z)), Tensor([math.pi / 2]), Tensor([1.0]), mode)
    np.testing.assert_allclose(out.data, [-1.0], rtol=1e-15)

    a = Tensor([[2.0, 1.0], [1.0, 3.0]])

    def quad(z):
        col = P.reshape(z, (2, 1))
        return 0.5 * P.sum(P.transpose(col) @ (a @ col))

    out = hvp(quad, Tensor([0.4, -0.1]), Tensor([1.0, 0.0]), mode)
    np.testing.assert_allclose(out.data, [2.0, 1.0], rtol=1e-15)


def test_hvp_shape_mismatch():
    with pytest.raises(ShapeError):
        hvp(half_sq, Tensor([1.0, 2.0]), Tensor([1.0]))


def test_mvp_examples():
    loss = lambda th, eta: 0.5 * P.sum(eta * th * th)
    out = mvp(loss, Tensor([1.0, 2.0]), Tensor([0.7, 0.3]), Tensor([1.0, 1.0]))
    np.testing.assert_allclose(out.data, [1.0, 2.0], rtol=1e-15)
    independent = lambda th, eta: P.sum(P.sin(th))
    out = mvp(independent, Tensor([1.0, 2.0]), Tensor([0.7, 0.3]), Tensor([1.0, 1.0]))
    np.testing.assert_array_equal(out.data, [0.0, 0.0])


def test_mvp_matches_dense_mixed_for_bilinear():
    rng = np.random.default_rng(5)
    w = Tensor(rng.normal(size=(4, 3)))
    loss = lambda th, eta: P.sum(P.reshape(th, (1, 4)) @ w @ P.reshape(eta, (3, 1)))
    th, eta, u = Tensor(rng.normal(size=4)), Tensor(rng.normal(size=3)), Tensor(rng.normal(size=4))
    mixed = dense_mixed(loss, th, eta).data
    np.testing.assert_allclose(mixed, w.data.T, rtol=1e-14)
    np.testing.assert_allclose(mvp(loss, th, eta, u).data, mixed @ u.data, rtol=1e-12)


def test_dense_mixed_transpose_identity():
    rng = np.random.default_rng(6)
    c = Tensor(rng.normal(size=3))

    def loss(th, eta):
        return P.sum(P.sin(th * P.sum(eta)) * P.exp(0.2 * eta * c)) + P.sum(P.cos(eta) * th)

    th, eta = Tensor(rng.normal(size=3)), Tensor(rng.normal(size=3))
    a = dense_mixed(loss, th, eta).data
    b = dense_mixed(lambda e, t: loss(t, e), eta, th).data
    np.testing.assert_allclose(a, b.T, atol=1e-10)


def test_fwdrev_grad_examples():
    loss = lambda th, x: 0.5 * P.sum(P.square(th - x))
    th, x = Tensor([1.0, -2.0]), Tensor([0.5, 0.5])
    fr = fwdrev_grad(loss)
    assert fr(th, x).data.tobytes() == grad(loss)(th, x).data.tobytes()
    ct = Tensor([3.0, -1.0])
    _, pullback, _ = vjp(fr, th, x)
    g_th, g_x = pullback(ct)
    np.testing.assert_allclose(g_th.data, ct.data, rtol=1e-15)
    np.testing.assert_allclose(g_x.data, -ct.data, rtol=1e-15)


def test_fwdrev_grad_rejects_bad_cotangent():
    loss = lambda th, x: 0.5 * P.sum(P.square(th - x))
    _, pullback, _ = vjp(fwdrev_grad(loss), Tensor([1.0, 2.0]), Tensor([0.0, 0.0]))
    with pytest.raises(ShapeError):
        pullback(Tensor([1.0]))


def test_fwdrev_grad_rejects_non_scalar_loss():
    with pytest.raises(ShapeError):
        fwdrev_grad(lambda th: P.sin(th))(Tensor([1.0, 2.0]))


@pytest.mark.parametrize("name", TASKS)
def test_fwdrev_pullback_matches_reverse_over_reverse_on_task_losses(name):
    task = make_task(name, TaskConfig(B=3, D=2, H=3, R=2, M_steps=2, seed=1))
    loss = task.problem.inner_loss
    theta, eta, x = task.s0.theta, task.problem.eta, task.batches[0]
    rng = np.random.default_rng(0)
    ct = tuple(Tensor(rng.normal(size=t.shape)) for t in theta)
    _, pb_mixed, _ = vjp(lambda th, e: fwdrev_grad(loss)(th, e, x), theta, eta)
    _, pb_plain, _ = vjp(lambda th, e: grad(loss)(th, e, x), theta, eta)
    mixed, plain = pb_mixed(ct), pb_plain(ct)
    for a, b in zip(_flat(mixed), _flat(plain)):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-12)
        assert np.max(np.abs(a - b) / denom) <= 1e-9


def _flat(tree):
    return [leaf.data for leaf in tree_leaves(tree)]


def test_dense_hessian_identity_and_cap():
    np.testing.assert_allclose(dense_hessian(half_sq, Tensor(np.zeros(4))).data, np.eye(4), rtol=1e-15)
    with pytest.raises(SizeExceededError):
        dense_hessian(half_sq, Tensor(np.zeros(21)))
    with pytest.raises(SizeExceededError):
        dense_mixed(lambda a, b: P.sum(a * b), Tensor(np.zeros(21)), Tensor(np.zeros(21)))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 8))
def test_modes_agree_and_match_oracles(seed, n):
    rng = np.random.default_rng(seed)
    loss = random_smooth_loss(rng, n)
    x, v = Tensor(rng.normal(size=n)), Tensor(rng.normal(size=n))
    results = [hvp(loss, x, v, mode).data for mode in MODES]
    scale = max(1.0, max(np.max(np.abs(r)) for r in results))
    for r in results[1:]:
        assert np.max(np.abs(r - results[0])) <= 1e-10 * scale
    h = dense_hessian(loss, x).data
    assert np.max(np.abs(h - h.T)) <= 1e-10 * max(1.0, np.max(np.abs(h)))
    assert np.max(np.abs(h @ v.data - results[1])) <= 1e-10 * scale
    step = 1e-5
    g = grad(loss)
    fd = (g(Tensor(x.data + step * v.data)).data - g(Tensor(x.data - step * v.data)).data) / (2 * step)
    assert np.linalg.norm(fd - results[1]) <= 1e-5 * max(np.linalg.norm(fd), 1e-12)


def test_forward_over_reverse_uses_less_memory_on_toy_map():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(8, 2)) * 0.5)
    loss = lambda w: P.mean(toy_map_forward((w,), x, 16))
    w, v = Tensor(rng.normal(size=(2, 2)) * 0.1), Tensor(rng.normal(size=(2, 2)))
    _, fwd_rev = measure(lambda a, b: hvp(loss, a, b, HvpMode.FORWARD_OVER_REVERSE), w, v)
    _, rev_rev = measure(lambda a, b: hvp(loss, a, b, HvpMode.REVERSE_OVER_REVERSE), w, v)
    assert fwd_rev.peak_dynamic_bytes < rev_rev.peak_dynamic_bytes
