"""Flat-vector views of tensor pytrees, used by the dense oracles."""

from __future__ import annotations

import numpy as np

from .core import concrete
from .tensor import Tensor
from .tree import tree_flatten, tree_unflatten


def tree_size(tree) -> int:
    return sum(leaf.size for leaf in tree_flatten(tree)[0])


def ravel(tree) -> np.ndarray:
    leaves = tree_flatten(tree)[0]
    if not leaves:
        return np.zeros(0)
    return np.concatenate([np.ravel(concrete(leaf).data) for leaf in leaves])


def unravel_like(vec, like):
    leaves, treedef = tree_flatten(like)
    vec = np.asarray(vec, dtype=np.float64)
    out, pos = [], 0
    for leaf in leaves:
        n = leaf.size
        out.append(Tensor(vec[pos:pos + n].reshape(leaf.shape)))
        pos += n
    if pos != vec.size:
        raise ValueError(f"vector of length {vec.size} does not fill a tree of size {pos}")
    return tree_unflatten(treedef, out)


def basis_like(like, j: int):
    e = np.zeros(tree_size(like))
    e[j] = 1.0
    return unravel_like(e, like)
