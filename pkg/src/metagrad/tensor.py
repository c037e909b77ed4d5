"""Immutable dense float64 tensors and the array protocol shared with tracers."""

from __future__ import annotations

import math

import numpy as np

from ._state import state

MAX_RANK = 4
BYTES_PER_ELEMENT = 8


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(ValueError):
    """An operation was evaluated outside its mathematical domain."""


class PowDomainError(DomainError):
    """pow with a non-positive base and a non-integer exponent."""


class NondifferentiableError(DomainError):
    """A derivative was requested at a point where it does not exist."""


class SizeExceededError(ValueError):
    """A dense oracle was asked to materialise more than its size cap."""


def check_shape(dims) -> tuple[int, ...]:
    shape = tuple(int(d) for d in dims)
    if len(shape) > MAX_RANK:
        raise ShapeError(f"rank {len(shape)} exceeds the rank cap of {MAX_RANK}")
    if any(d < 0 for d in shape):
        raise ShapeError(f"negative extent in shape {shape}")
    return shape


def num_elements(shape) -> int:
    return math.prod(shape)


class Array:
    """Operator overloading shared by concrete tensors and tracers.

    Every operator routes through the primitive layer so that the active
    differentiation levels see it.
    """

    __slots__ = ()
    __array_priority__ = 100

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return num_elements(self.shape)

    def __add__(self, other):
        return _ops().add(self, other)

    def __radd__(self, other):
        return _ops().add(other, self)

    def __sub__(self, other):
        return _ops().sub(self, other)

    def __rsub__(self, other):
        return _ops().sub(other, self)

    def __mul__(self, other):
        return _ops().mul(self, other)

    def __rmul__(self, other):
        return _ops().mul(other, self)

    def __truediv__(self, other):
        return _ops().div(self, other)

    def __rtruediv__(self, other):
        return _ops().div(other, self)

    def __pow__(self, other):
        return _ops().pow(self, other)

    def __rpow__(self, other):
        return _ops().pow(other, self)

    def __matmul__(self, other):
        return _ops().matmul(self, other)

    def __rmatmul__(self, other):
        return _ops().matmul(other, self)

    def __neg__(self):
        return _ops().neg(self)

    @property
    def T(self):
        return _ops().transpose(self)

    def sum(self, axes=None):
        return _ops().sum(self, axes)

    def mean(self, axes=None):
        return _ops().mean(self, axes)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = shape[0]
        return _ops().reshape(self, tuple(shape))


def _ops():
    from . import primitives

    return primitives


class Tensor(Array):
    """Immutable row-major buffer of 64-bit floats with rank at most 4.

    When a memory ledger is active, constructing a tensor registers an
    allocation and the tensor's destruction registers the matching free.
    """

    __slots__ = ("_data", "_ledger", "_static", "__weakref__")

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64)
        check_shape(arr.shape)
        self._init(arr)

    def _init(self, arr: np.ndarray):
        arr.flags.writeable = False
        self._data = arr
        self._static = False
        ledger = state.ledger
        self._ledger = None
        if ledger is not None:
            ledger.alloc(self)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Fast path for kernel outputs: the buffer is fresh and owned.
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"rank {arr.ndim} exceeds the rank cap of {MAX_RANK}")
        t = cls.__new__(cls)
        if not arr.flags.c_contiguous:
            arr = arr.copy()
        t._init(arr)
        return t

    def __del__(self):
        ledger = getattr(self, "_ledger", None)
        if ledger is not None:
            ledger.release(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the underlying buffer."""
        return self._data

    @property
    def nbytes(self) -> int:
        return self._data.size * BYTES_PER_ELEMENT

    def numpy(self) -> np.ndarray:
        return np.array(self._data)

    def item(self) -> float:
        if self._data.size != 1:
            raise ShapeError(f"item() on a tensor of shape {self.shape}")
        return float(self._data.reshape(()))

    def __float__(self) -> float:
        return self.item()

    def __repr__(self):
        return f"Tensor({np.array2string(self._data, precision=6)})"

    def __len__(self):
        if not self.shape:
            raise TypeError("len() of a rank-0 tensor")
        return self.shape[0]

    def __eq__(self, other):
        return NotImplemented

    __hash__ = object.__hash__


def as_array(x) -> Array:
    """Return ``x`` if it already is an array, else a constant tensor."""
    if isinstance(x, Array):
        return x
    return Tensor(x)


def zeros(shape) -> Tensor:
    return Tensor._wrap(np.zeros(check_shape(shape)))


def ones(shape) -> Tensor:
    return Tensor._wrap(np.ones(check_shape(shape)))


def full(shape, value: float) -> Tensor:
    return Tensor._wrap(np.full(check_shape(shape), float(value)))


def eye(n: int) -> Tensor:
    return Tensor._wrap(np.eye(n))
