"""Second-order products and the forward-over-reverse gradient rule."""

from __future__ import annotations

from enum import Enum

import numpy as np

from .autodiff import custom_vjp, grad, jvp, vjp
from .tensor import ShapeError, SizeExceededError, Tensor
from .tree import tree_flatten
from .vec import basis_like, ravel, tree_size

DENSE_SIZE_CAP = 20


class HvpMode(str, Enum):
    REVERSE_OVER_FORWARD = "reverse-over-forward"
    FORWARD_OVER_REVERSE = "forward-over-reverse"
    REVERSE_OVER_REVERSE = "reverse-over-reverse"


def _check_like(a, b, what):
    a_leaves, a_def = tree_flatten(a)
    b_leaves, b_def = tree_flatten(b)
    if a_def != b_def or any(x.shape != y.shape for x, y in zip(a_leaves, b_leaves)):
        shapes = [x.shape for x in b_leaves], [x.shape for x in a_leaves]
        raise ShapeError(f"{what} shapes {shapes[0]} do not match {shapes[1]}")


def hvp(loss, x, v, mode: HvpMode | str = HvpMode.FORWARD_OVER_REVERSE):
    """Hessian of scalar ``loss`` at ``x`` applied to ``v``."""
    _check_like(x, v, "direction")
    mode = HvpMode(mode)
    if mode is HvpMode.REVERSE_OVER_FORWARD:
        return grad(lambda p: jvp(loss, (p,), (v,))[1])(x)
    if mode is HvpMode.FORWARD_OVER_REVERSE:
        return jvp(grad(loss), (x,), (v,))[1]
    _, pullback, _ = vjp(grad(loss), x)
    return pullback(v)[0]


def mvp(loss, theta, eta, u, *rest):
    """Mixed second derivative ``d(grad_eta loss)/d theta`` applied to ``u``.

    ``loss`` is called as ``loss(theta, eta, *rest)``; the result has
    ``eta``'s structure.
    """
    _check_like(theta, u, "direction")
    grad_eta = grad(loss, argnums=1)
    return jvp(lambda p: grad_eta(p, eta, *rest), (theta,), (u,))[1]


def fwdrev_grad(loss):
    """``grad(loss)`` w.r.t. the first argument, with a mixed-mode pullback.

    The forward value is exactly ``grad(loss)(theta, *rest)``.  Its pullback
    for a cotangent ``ct`` differentiates the full gradient (over every
    argument that needs a cotangent) in forward mode along ``ct``.  Because
    second derivatives are symmetric, this single pass yields both the
    Hessian product for ``theta`` and the mixed products for the remaining
    arguments, without storing any activations of the inner backward pass.
    """
    grad_theta = grad(loss)

    def fwd(theta, *rest):
        return grad_theta(theta, *rest), (theta,) + rest

    def bwd(res, ct, needs):
        theta, rest = res[0], res[1:]
        wanted = tuple(i for i, need in enumerate(needs) if need)
        full_grad = grad(loss, argnums=wanted)
        tangents = jvp(lambda p: full_grad(p, *rest), (theta,), (ct,))[1]
        out = [None] * len(res)
        for i, t in zip(wanted, tangents):
            out[i] = t
        return tuple(out)

    return custom_vjp(grad_theta, fwd, bwd, residuals_are_args=True, bwd_needs_mask=True)


def dense_hessian(loss, x, *, mode: HvpMode | str = HvpMode.FORWARD_OVER_REVERSE,
                  size_cap: int = DENSE_SIZE_CAP) -> Tensor:
    """n x n Hessian assembled column by column from Hessian-vector products."""
    n = tree_size(x)
    if n > size_cap:
        raise SizeExceededError(f"input size {n} exceeds the oracle cap of {size_cap}")
    cols = [ravel(hvp(loss, x, basis_like(x, j), mode)) for j in range(n)]
    return Tensor(np.stack(cols, axis=1) if cols else np.zeros((0, 0)))


def dense_mixed(loss, theta, eta, *rest, size_cap: int = DENSE_SIZE_CAP) -> Tensor:
    """|eta| x |theta| matrix of second derivatives d^2 loss / d eta d theta.

    Column ``j`` is the mixed product with the ``j``-th basis vector of theta.
    """
    p, m = tree_size(theta), tree_size(eta)
    if p > size_cap or m > size_cap:
        raise SizeExceededError(f"sizes ({p}, {m}) exceed the oracle cap of {size_cap}")
    cols = [ravel(mvp(loss, theta, eta, basis_like(theta, j), *rest)) for j in range(p)]
    return Tensor(np.stack(cols, axis=1) if cols else np.zeros((m, 0)))
