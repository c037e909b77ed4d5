"""Minimal pytree helpers: nested tuples, lists, namedtuples and dicts of arrays."""

from __future__ import annotations

from typing import Any, Callable

_LEAF = "leaf"


class TreeDef:
    __slots__ = ("kind", "meta", "children", "num_leaves")

    def __init__(self, kind, meta, children):
        self.kind = kind
        self.meta = meta
        self.children = children
        self.num_leaves = 1 if kind == _LEAF else sum(c.num_leaves for c in children)

    def __eq__(self, other):
        return (
            isinstance(other, TreeDef)
            and self.kind == other.kind
            and self.meta == other.meta
            and self.children == other.children
        )

    def __hash__(self):
        return hash((self.kind, self.meta, tuple(self.children)))

    def __repr__(self):
        if self.kind == _LEAF:
            return "*"
        return f"{self.kind}{self.meta or ''}{list(self.children)}"


_LEAF_DEF = TreeDef(_LEAF, None, ())


def _flatten(x, leaves):
    if x is None:
        return TreeDef("none", None, ())
    if isinstance(x, tuple):
        if hasattr(x, "_fields"):
            children = tuple(_flatten(c, leaves) for c in x)
            return TreeDef("namedtuple", type(x), children)
        return TreeDef("tuple", None, tuple(_flatten(c, leaves) for c in x))
    if isinstance(x, list):
        return TreeDef("list", None, tuple(_flatten(c, leaves) for c in x))
    if isinstance(x, dict):
        keys = tuple(sorted(x))
        return TreeDef("dict", keys, tuple(_flatten(x[k], leaves) for k in keys))
    leaves.append(x)
    return _LEAF_DEF


def tree_flatten(x: Any) -> tuple[list, TreeDef]:
    leaves: list = []
    treedef = _flatten(x, leaves)
    return leaves, treedef


def _unflatten(td: TreeDef, it):
    kind = td.kind
    if kind == _LEAF:
        return next(it)
    if kind == "none":
        return None
    children = [_unflatten(c, it) for c in td.children]
    if kind == "tuple":
        return tuple(children)
    if kind == "list":
        return children
    if kind == "namedtuple":
        return td.meta._make(children)
    return dict(zip(td.meta, children))


def tree_unflatten(treedef: TreeDef, leaves) -> Any:
    it = iter(leaves)
    out = _unflatten(treedef, it)
    return out


def tree_leaves(x: Any) -> list:
    return tree_flatten(x)[0]


def tree_map(fn: Callable, x: Any, *rest: Any) -> Any:
    leaves, treedef = tree_flatten(x)
    others = [tree_flatten(r) for r in rest]
    for _, td in others:
        if td != treedef:
            raise ValueError(f"tree structure mismatch: {treedef} vs {td}")
    mapped = [fn(*args) for args in zip(leaves, *(o[0] for o in others))]
    return tree_unflatten(treedef, mapped)
