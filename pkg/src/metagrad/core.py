"""Dispatch of primitive applications through nested differentiation levels.

Every forward or reverse transformation in flight owns a ``Level`` with a
unique, monotonically increasing number.  Values flowing through a
transformation are wrapped in ``Tracer`` objects of that level; a primitive
applied to mixed operands is handled by the highest level present, which in
turn re-applies the primitive to the unwrapped (lower-level) operands.
"""

from __future__ import annotations

import itertools

from .tensor import Array, Tensor

_level_ids = itertools.count(1)


class Level:
    __slots__ = ("level", "__weakref__")

    def __init__(self):
        self.level = next(_level_ids)

    def process(self, prim, args, params):
        raise NotImplementedError

    def process_custom_vjp(self, call, args, skip):
        raise NotImplementedError

    def process_checkpoint(self, fun, policy, static, args):
        raise NotImplementedError


class Tracer(Array):
    __slots__ = ("_level", "_primal", "__weakref__")

    @property
    def shape(self):
        return self._primal.shape

    def __repr__(self):
        return f"{type(self).__name__}(level={self._level.level}, primal={self._primal!r})"

    def __float__(self):
        return float(concrete(self))


def top_level(args) -> Level | None:
    top = None
    for a in args:
        if isinstance(a, Tracer):
            lv = a._level
            if top is None or lv.level > top.level:
                top = lv
    return top


def bind(prim, *args, **params):
    top = top_level(args)
    if top is None:
        return prim.evaluate(args, params)
    return top.process(prim, args, params)


def concrete(x) -> Tensor:
    """Strip every tracer layer and return the underlying concrete tensor."""
    while isinstance(x, Tracer):
        x = x._primal
    return x


def base_buffers(x, out: dict) -> None:
    """Collect the distinct concrete buffers held by a (possibly traced) value."""
    stack = [x]
    while stack:
        v = stack.pop()
        if isinstance(v, Tensor):
            out[id(v)] = v
        elif isinstance(v, Tracer):
            stack.append(v._primal)
            tangent = getattr(v, "_tangent", None)
            # Deferred tangents own no buffer until they are computed.
            if isinstance(tangent, Array):
                stack.append(tangent)
