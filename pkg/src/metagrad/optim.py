"""Differentiable inner-loop optimizers over tensor pytrees.

An optimizer turns a raw gradient into a direction ``g~`` and carries its
own state.  The integer step counter (used for bias correction) is passed in
by the unroll loop rather than stored in the differentiable state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from . import primitives as P
from .tree import tree_map

EPS = 1e-8


@dataclass(frozen=True)
class Optimizer:
    name: str
    init: Callable  # theta -> opt_state
    direction: Callable  # (g, opt_state, step) -> (direction, opt_state')


def sgd() -> Optimizer:
    return Optimizer("sgd", lambda theta: (), lambda g, state, step: (g, state))


def sgd_momentum(beta: float = 0.9) -> Optimizer:
    def init(theta):
        return tree_map(P.zeros_like, theta)

    def direction(g, m, step):
        m = tree_map(lambda mi, gi: beta * mi + gi, m, g)
        return m, m

    return Optimizer("sgd_momentum", init, direction)


def adaptive(beta1: float = 0.9, beta2: float = 0.999, eps: float = EPS) -> Optimizer:
    """First/second-moment optimizer with ``eps`` inside the square root.

    Keeping ``eps`` under the root makes the update smooth at zero gradient,
    which second-order differentiation through it requires.
    """

    def init(theta):
        return (tree_map(P.zeros_like, theta), tree_map(P.zeros_like, theta))

    def direction(g, state, step):
        m, v = state
        m = tree_map(lambda mi, gi: beta1 * mi + (1.0 - beta1) * gi, m, g)
        v = tree_map(lambda vi, gi: beta2 * vi + (1.0 - beta2) * (gi * gi), v, g)
        c1 = 1.0 - beta1**step
        c2 = 1.0 - beta2**step
        d = tree_map(lambda mi, vi: (mi / c1) / P.sqrt(vi / c2 + eps), m, v)
        return d, (m, v)

    return Optimizer("adaptive", init, direction)


OPTIMIZERS = {"sgd": sgd, "sgd_momentum": sgd_momentum, "adaptive": adaptive}


def make_optimizer(name: str) -> Optimizer:
    try:
        return OPTIMIZERS[name]()
    except KeyError:
        raise ValueError(f"unknown optimizer {name!r}; expected one of {sorted(OPTIMIZERS)}") from None


def fixed_lr_update(opt: Optimizer, lr: float):
    """Update ``theta' = theta - lr * g~``; the meta-parameters do not enter."""

    def update(g, theta, opt_state, eta, x, step):
        d, opt_state = opt.direction(g, opt_state, step)
        return tree_map(lambda t, di: t - lr * di, theta, d), opt_state

    return update


def per_parameter_lr_update(opt: Optimizer):
    """Update ``theta' = theta - eta * g~`` with ``eta`` shaped like ``theta``."""

    def update(g, theta, opt_state, eta, x, step):
        d, opt_state = opt.direction(g, opt_state, step)
        return tree_map(lambda t, e, di: t - e * di, theta, eta, d), opt_state

    return update

