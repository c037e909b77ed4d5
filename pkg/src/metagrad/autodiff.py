"""Composable first-order differentiation.

Forward mode propagates tangents alongside evaluation (``jvp``); reverse mode
records a ``Trace`` of residuals and replays it backwards (``vjp``/``grad``).
Both are levels in the dispatch scheme of :mod:`metagrad.core`, so they nest
in any order.  ``checkpoint`` trades residual storage for recomputation and
``custom_vjp`` lets a function supply its own pullback.
"""

from __future__ import annotations

import functools
import warnings
import weakref
from dataclasses import dataclass, field

import numpy as np

from ._state import state
from .core import Level, Tracer, base_buffers, bind, top_level
from .primitives import add, zeros_like
from .tensor import ShapeError, SizeExceededError, Tensor, as_array, ones, zeros
from .tree import tree_flatten, tree_unflatten
from .vec import basis_like, ravel, tree_size

# --------------------------------------------------------------------------
# Forward mode


class _DeferredTangent:
    """Tangent of a scalar reduction, computed only when first read.

    Gradient computations evaluate the loss value and then discard it; under
    forward mode its tangent would be dead work.  The operands it needs are
    kept alive anyway (they are residuals of the enclosing reverse pass).
    """

    __slots__ = ("prim", "primals", "tangents", "out", "params")

    def __init__(self, prim, primals, tangents, out, params):
        self.prim = prim
        self.primals = primals
        self.tangents = tangents
        self.out = out
        self.params = params

    def force(self):
        return self.prim.jvp(self.primals, self.tangents, self.out, **self.params)


_DEFERRED_KINDS = frozenset({"sum", "mean", "square-error-reduce"})


class JVPTracer(Tracer):
    __slots__ = ("_tangent",)

    def __init__(self, level, primal, tangent):
        self._level = level
        self._primal = primal
        self._tangent = tangent

    @property
    def tangent(self):
        t = self._tangent
        if isinstance(t, _DeferredTangent):
            t = t.force()
            if t is None:
                t = zeros_like(self._primal)
            self._tangent = t
        return t


class ForwardLevel(Level):
    """One in-flight forward-mode transformation. Records nothing."""

    __slots__ = ()

    def _split(self, args):
        primals, tangents = [], []
        for a in args:
            if isinstance(a, JVPTracer) and a._level is self:
                primals.append(a._primal)
                tangents.append(a.tangent)
            else:
                primals.append(a)
                tangents.append(None)
        return primals, tangents

    def process(self, prim, args, params):
        primals, tangents = self._split(args)
        out = bind(prim, *primals, **params)
        if prim.name in _DEFERRED_KINDS and out.shape == ():
            return JVPTracer(self, out, _DeferredTangent(prim, primals, tangents, out, params))
        tangent = prim.jvp(primals, tangents, out, **params)
        if tangent is None:
            return out
        return JVPTracer(self, out, tangent)

    def process_custom_vjp(self, call, args, skip):
        # Custom pullbacks do not change forward-mode semantics.
        return call.fun(*args)

    def process_checkpoint(self, fun, policy, static, args):
        return fun(*args)


def jvp(f, primals, tangents):
    """Evaluate ``f(*primals)`` and the Jacobian-vector product with ``tangents``.

    Returns ``(outputs, output_tangents)`` with the structure of ``f``'s output.
    No residuals are stored: each tangent is computed as soon as its primal is.
    """
    primals, tangents = tuple(primals), tuple(tangents)
    p_flat, p_def = tree_flatten(primals)
    t_flat, t_def = tree_flatten(tangents)
    if p_def != t_def:
        raise ShapeError(f"tangent structure {t_def} does not match primals {p_def}")
    level = ForwardLevel()
    args = []
    for p, t in zip(p_flat, t_flat):
        p, t = as_array(p), as_array(t)
        if p.shape != t.shape:
            raise ShapeError(f"tangent shape {t.shape} does not match primal shape {p.shape}")
        args.append(JVPTracer(level, p, t))
    out = f(*tree_unflatten(p_def, args))
    out_flat, out_def = tree_flatten(out)
    outs, touts = [], []
    for o in out_flat:
        if isinstance(o, JVPTracer) and o._level is level:
            outs.append(o._primal)
            touts.append(o.tangent)
        else:
            o = as_array(o)
            _check_escape(o, level)
            outs.append(o)
            touts.append(zeros_like(o))
    return tree_unflatten(out_def, outs), tree_unflatten(out_def, touts)


# --------------------------------------------------------------------------
# Reverse mode


class VJPTracer(Tracer):
    __slots__ = ("_ref",)

    def __init__(self, level, primal, ref):
        self._level = level
        self._primal = primal
        self._ref = ref


class _Node:
    __slots__ = ("parents", "res", "n_out", "__weakref__")
    is_leaf = False
    label = "?"

    def release(self):
        self.res = None

    def residual_values(self):
        return self.res or ()


class _Leaf(_Node):
    is_leaf = True
    label = "input"

    def __init__(self):
        self.parents = ()
        self.res = None
        self.n_out = 1


class _PrimNode(_Node):
    __slots__ = ("prim", "params", "needs")

    def __init__(self, prim, params, res, parents, needs):
        self.prim = prim
        self.params = params
        self.res = res
        self.parents = parents
        self.needs = needs
        self.n_out = 1

    @property
    def label(self):
        return self.prim.name

    def backward(self, slot):
        if self.res is None:
            raise RuntimeError("pullback already consumed")
        return self.prim.vjp(self.res, slot[0], self.needs, **self.params)


class _CustomNode(_Node):
    __slots__ = ("call", "needs", "in_def", "out_def", "out_shapes")
    label = "custom_vjp"

    def __init__(self, call, res, parents, needs, in_def, out_def, out_shapes):
        self.call = call
        self.res = res
        self.parents = parents
        self.needs = needs
        self.in_def = in_def
        self.out_def = out_def
        self.out_shapes = out_shapes
        self.n_out = len(out_shapes)

    def residual_values(self):
        return tree_flatten(self.res)[0] if self.res is not None else ()

    def backward(self, slot):
        if self.res is None:
            raise RuntimeError("pullback already consumed")
        cts = [c if c is not None else _zeros(s) for c, s in zip(slot, self.out_shapes)]
        ct_tree = tree_unflatten(self.out_def, cts)
        state.custom_depth += 1
        try:
            if self.call.bwd_needs_mask:
                arg_needs = _per_arg_needs(self.in_def, self.needs)
                in_cts = self.call.bwd(self.res, ct_tree, arg_needs)
            else:
                in_cts = self.call.bwd(self.res, ct_tree)
        finally:
            state.custom_depth -= 1
        return _flatten_per_arg(self.in_def, in_cts)


class _CheckpointNode(_Node):
    __slots__ = ("fun", "policy", "primals", "in_def", "saves", "saved_custom")
    label = "checkpoint"

    def __init__(self, fun, policy, primals, parents, in_def, saves, saved_custom, n_out):
        self.fun = fun
        self.policy = policy
        self.primals = primals
        self.parents = parents
        self.in_def = in_def
        self.saves = saves
        self.saved_custom = saved_custom
        self.res = tuple(primals) + tuple(saves)
        self.n_out = n_out

    def release(self):
        self.res = None
        self.primals = None
        self.saves = None

    def backward(self, slot):
        if self.res is None:
            raise RuntimeError("pullback already consumed")
        replay = Trace()
        leaves = []
        leaf_nodes = []
        for p, parent in zip(self.primals, self.parents):
            if parent is None:
                leaves.append(p)
                leaf_nodes.append(None)
            else:
                t = replay.leaf(p)
                leaves.append(t)
                leaf_nodes.append(t._ref[0])
        ctx = _Replay(replay, self.saved_custom, self.saves)
        state.replays.append(ctx)
        try:
            out = self.fun(*tree_unflatten(self.in_def, leaves))
        finally:
            state.replays.pop()
        del leaves
        out_flat, _ = tree_flatten(out)
        refs = [
            o._ref if isinstance(o, VJPTracer) and o._level is replay else None
            for o in out_flat
        ]
        del out, out_flat
        leaf_cts = replay.backprop(refs, slot, consume=True)
        return [leaf_cts.get(n) if n is not None else None for n in leaf_nodes]


class Trace(Level):
    """Record of one reverse-mode execution.

    Holds the recorded operations in execution order together with the
    residual buffers their cotangent rules consume.
    """

    __slots__ = ("nodes",)

    def __init__(self):
        super().__init__()
        self.nodes = []

    # -- recording --------------------------------------------------------

    def leaf(self, x) -> VJPTracer:
        node = _Leaf()
        self.nodes.append(node)
        return VJPTracer(self, x, (node, 0))

    def _split(self, args):
        primals, parents = [], []
        for a in args:
            if isinstance(a, VJPTracer) and a._level is self:
                primals.append(a._primal)
                parents.append(a._ref)
            else:
                primals.append(a)
                parents.append(None)
        return primals, parents

    def _record(self, node):
        self.nodes.append(node)
        ledger = state.ledger
        if ledger is not None:
            ledger.note_residuals(node.residual_values())

    def process(self, prim, args, params):
        primals, parents = self._split(args)
        out = bind(prim, *primals, **params)
        needs = tuple(p is not None for p in parents)
        res = prim.residuals(primals, out, needs, **params)
        node = _PrimNode(prim, params, res, tuple(parents), needs)
        self._record(node)
        return VJPTracer(self, out, (node, 0))

    def process_custom_vjp(self, call, args, skip):
        flat, in_def = tree_flatten(args)
        primals, parents = self._split(flat)
        lower_args = tree_unflatten(in_def, primals)
        if skip is not None:
            out, res = skip, lower_args
        else:
            state.custom_depth += 1
            try:
                out, res = call.fwd(*lower_args)
            finally:
                state.custom_depth -= 1
        out_flat, out_def = tree_flatten(out)
        out_flat = [as_array(o) for o in out_flat]
        needs = tuple(p is not None for p in parents)
        node = _CustomNode(call, res, tuple(parents), needs, in_def, out_def,
                           [o.shape for o in out_flat])
        self._record(node)
        return tree_unflatten(
            out_def, [VJPTracer(self, o, (node, i)) for i, o in enumerate(out_flat)]
        )

    def process_checkpoint(self, fun, policy, static, args):
        flat, in_def = tree_flatten(args)
        primals, parents = self._split(flat)
        collector = _Collector(policy)

        def fun_collect(*xs):
            collector.base_depth = state.custom_depth
            state.collectors.append(collector)
            try:
                out = fun(*xs)
            finally:
                state.collectors.remove(collector)
            return out, list(collector.values)

        out, saves = checkpoint(fun_collect, policy, static=static)(
            *tree_unflatten(in_def, primals)
        )
        out_flat, _ = tree_flatten(out)
        out_flat = [as_array(o) for o in out_flat]
        escaped = top_level(out_flat + list(saves))
        if escaped is not None and escaped.level >= self.level:
            raise ValueError(
                "checkpointed function closed over a differentiated value; "
                "pass it as an argument instead"
            )
        missing = policy.saved_names - collector.seen
        if missing:
            warnings.warn(f"checkpoint names never produced: {sorted(missing)}", stacklevel=3)
        ledger = state.ledger
        if ledger is not None:
            if static:
                ledger.mark_static(primals)
            ledger.mark_static(saves)
        node = _CheckpointNode(fun, policy, primals, tuple(parents), in_def, saves,
                               collector.saved_custom(), len(out_flat))
        self._record(node)
        _, out_def = tree_flatten(out)
        return tree_unflatten(
            out_def, [VJPTracer(self, o, (node, i)) for i, o in enumerate(out_flat)]
        )

    # -- replay -------------------------------------------------------------

    @staticmethod
    def _accumulate(acc, ref, ct):
        node, idx = ref
        slot = acc.get(node)
        if slot is None:
            slot = [None] * node.n_out
            acc[node] = slot
        prev = slot[idx]
        slot[idx] = ct if prev is None else add(prev, ct)

    def backprop(self, out_refs, out_cts, consume=False):
        """Sweep the recorded operations backwards from the given outputs.

        Returns a mapping from input (leaf) nodes to their cotangents.  With
        ``consume`` every residual is dropped right after its cotangent rule
        has run, so the trace can be replayed only once.
        """
        acc = {}
        for ref, ct in zip(out_refs, out_cts):
            if ref is not None and ct is not None:
                self._accumulate(acc, ref, ct)
        leaf_cts = {}
        nodes = self.nodes
        for i in range(len(nodes) - 1, -1, -1):
            node = nodes[i]
            slot = acc.pop(node, None)
            if slot is None:
                if consume:
                    node.release()
                    nodes[i] = None
                continue
            if node.is_leaf:
                leaf_cts[node] = slot[0]
                continue
            in_cts = node.backward(slot)
            del slot
            if consume:
                node.release()
                nodes[i] = None
            for parent, ct in zip(node.parents, in_cts):
                if parent is not None and ct is not None:
                    self._accumulate(acc, parent, ct)
            del in_cts
        if consume:
            self.nodes = []
        return leaf_cts

    # -- accounting ---------------------------------------------------------

    @property
    def ops(self) -> list[str]:
        return [n.label for n in self.nodes if n is not None and not n.is_leaf]

    @property
    def residuals(self) -> list:
        out = []
        for n in self.nodes:
            if n is not None:
                out.extend(r for r in n.residual_values() if r is not None)
        return out

    @property
    def residual_bytes(self) -> int:
        """Bytes of the distinct buffers currently held as residuals."""
        bufs: dict = {}
        for r in self.residuals:
            base_buffers(r, bufs)
        return sum(b.nbytes for b in bufs.values())


class Pullback:
    """Maps output cotangents to cotangents of every primal input."""

    def __init__(self, trace, refs, out_def, out_shapes, leaf_nodes, in_shapes, in_def, consume):
        self.trace = trace
        self._refs = refs
        self._out_def = out_def
        self._out_shapes = out_shapes
        self._leaf_nodes = leaf_nodes
        self._in_shapes = in_shapes
        self._in_def = in_def
        self._consume = consume
        self._used = False

    def __call__(self, ct):
        if self._consume and self._used:
            raise RuntimeError("this pullback consumes its residuals and was already called")
        ct_flat, ct_def = tree_flatten(ct)
        if ct_def != self._out_def:
            raise ShapeError(f"cotangent structure {ct_def} does not match output {self._out_def}")
        cts = []
        for c, shape in zip(ct_flat, self._out_shapes):
            c = as_array(c)
            if c.shape != shape:
                raise ShapeError(f"cotangent shape {c.shape} does not match output shape {shape}")
            cts.append(c)
        self._used = True
        leaf_cts = self.trace.backprop(self._refs, cts, consume=self._consume)
        del cts, ct_flat
        if self._consume:
            self._refs = None
        out = []
        for node, shape in zip(self._leaf_nodes, self._in_shapes):
            c = leaf_cts.pop(node, None)
            out.append(c if c is not None else _zeros(shape))
        return tree_unflatten(self._in_def, out)


def vjp(f, *primals, consume=False):
    """Evaluate ``f(*primals)`` while recording a trace for reverse mode.

    Returns ``(output, pullback, trace)``.  ``pullback(ct)`` returns a tuple
    holding one cotangent per primal argument.
    """
    trace = Trace()
    p_flat, p_def = tree_flatten(primals)
    p_flat = [as_array(p) for p in p_flat]
    leaves = [trace.leaf(p) for p in p_flat]
    leaf_nodes = [t._ref[0] for t in leaves]
    out = f(*tree_unflatten(p_def, leaves))
    del leaves
    out_flat, out_def = tree_flatten(out)
    del out
    outs, refs = [], []
    for o in out_flat:
        if isinstance(o, VJPTracer) and o._level is trace:
            outs.append(o._primal)
            refs.append(o._ref)
        else:
            o = as_array(o)
            _check_escape(o, trace)
            outs.append(o)
            refs.append(None)
    del out_flat
    pullback = Pullback(trace, refs, out_def, [o.shape for o in outs], leaf_nodes,
                        [p.shape for p in p_flat], p_def, consume)
    return tree_unflatten(out_def, outs), pullback, trace


def _value_and_grad(f, argnums, args):
    nums = (argnums,) if isinstance(argnums, int) else tuple(argnums)
    if not nums:
        raise ValueError("argnums must name at least one argument")

    def restricted(*diff):
        full = list(args)
        for i, v in zip(nums, diff):
            full[i] = v
        return f(*full)

    value, pullback, _ = vjp(restricted, *(args[i] for i in nums), consume=True)
    if not isinstance(value, (Tensor, Tracer)) or value.shape != ():
        shape = getattr(value, "shape", type(value).__name__)
        raise ShapeError(f"grad needs a scalar-valued function, got output {shape}")
    cts = pullback(ones(()))
    return value, (cts[0] if isinstance(argnums, int) else cts)


def grad(f, argnums=0):
    """Return a function computing the gradient of scalar ``f`` w.r.t. ``argnums``."""

    @functools.wraps(f)
    def grad_f(*args):
        return _value_and_grad(f, argnums, args)[1]

    return grad_f


def value_and_grad(f, argnums=0):
    @functools.wraps(f)
    def vg(*args):
        return _value_and_grad(f, argnums, args)

    return vg


def _zeros(shape) -> Tensor:
    return zeros(shape)


def _check_escape(x, level):
    if isinstance(x, Tracer) and x._level.level > level.level:
        raise ValueError("a value traced by an inner transformation escaped its scope")


# --------------------------------------------------------------------------
# Checkpointing


_MODES = ("none", "recompute-all", "save-named")


@dataclass(frozen=True)
class CheckpointPolicy:
    mode: str = "recompute-all"
    saved_names: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"unknown checkpoint mode {self.mode!r}; expected one of {_MODES}")
        object.__setattr__(self, "saved_names", frozenset(self.saved_names))
        if self.saved_names and self.mode != "save-named":
            raise ValueError("saved_names only apply to the save-named mode")


NO_REMAT = CheckpointPolicy("none")
RECOMPUTE_ALL = CheckpointPolicy("recompute-all")


def save_named(*names: str) -> CheckpointPolicy:
    return CheckpointPolicy("save-named", frozenset(names))


class _Collector:
    """Gathers tagged values while a checkpointed forward pass runs."""

    def __init__(self, policy):
        self.names = policy.saved_names
        self.values = []
        self.seen = set()
        self.base_depth = 0
        self.n_calls = 0
        # call index -> (output treedef, [weakref per output leaf])
        self.custom_outputs = {}
        # id(leaf) -> (call index, leaf position)
        self._leaf_index = {}
        # (call index, leaf position) -> save position
        self._saved_leaves = {}

    def add(self, name, x):
        self.seen.add(name)
        pos = len(self.values)
        self.values.append(x)
        hit = self._leaf_index.get(id(x))
        if hit is not None:
            call_idx, leaf_pos = hit
            ref = self.custom_outputs[call_idx][1][leaf_pos]
            if ref() is x:
                self._saved_leaves[hit] = pos

    def note_custom_output(self, call_idx, out):
        flat, out_def = tree_flatten(out)
        refs = []
        for i, leaf in enumerate(flat):
            try:
                refs.append(weakref.ref(leaf))
            except TypeError:
                refs.append(lambda: None)
                continue
            self._leaf_index[id(leaf)] = (call_idx, i)
        self.custom_outputs[call_idx] = (out_def, refs)

    def saved_custom(self):
        found = {}
        for call_idx, (out_def, refs) in self.custom_outputs.items():
            positions = [self._saved_leaves.get((call_idx, i)) for i in range(len(refs))]
            if refs and all(p is not None for p in positions):
                found[call_idx] = (out_def, positions)
        return found


class _Replay:
    """Serves saved custom-call outputs while a checkpoint is re-executed."""

    def __init__(self, trace, saved_custom, saves):
        self.trace = trace
        self.saved_custom = saved_custom
        self.saves = saves
        self.base_depth = state.custom_depth
        self.n_calls = 0

    def lookup(self, call_idx):
        hit = self.saved_custom.get(call_idx)
        if hit is None:
            return None
        out_def, positions = hit
        return tree_unflatten(out_def, [self.saves[p] for p in positions])


def checkpoint(fun, policy: CheckpointPolicy = RECOMPUTE_ALL, *, static: bool = False):
    """Wrap ``fun`` so reverse mode stores only its inputs and named saves.

    The backward pass re-executes ``fun`` once before sweeping its cotangents.
    Forward mode sees ``fun`` unchanged.  Every differentiated value ``fun``
    uses must be passed as an argument.  ``static`` classifies the stored
    inputs as step-lifetime memory (per-inner-step checkpoints).
    """
    if policy.mode == "none":
        return fun

    @functools.wraps(fun)
    def wrapped(*args):
        flat, _ = tree_flatten(args)
        top = top_level(flat)
        if top is None:
            return fun(*args)
        return top.process_checkpoint(fun, policy, static, args)

    return wrapped


def tag(name: str, x):
    """Identity on values; labels ``x`` for save-named checkpoint policies."""
    for c in state.collectors:
        if name in c.names:
            c.add(name, x)
    return x


# --------------------------------------------------------------------------
# Custom pullback rules


class custom_vjp:
    """A function with a user-defined reverse-mode rule.

    ``fwd(*args) -> (out, residuals)`` and ``bwd(residuals, ct) -> cts`` where
    ``cts`` is a tuple with one entry per argument (``None`` for zero).  When
    ``bwd_needs_mask`` is set, ``bwd`` also receives a per-argument tuple of
    booleans saying which cotangents are actually consumed.  When
    ``residuals_are_args`` is set the residuals are the arguments themselves,
    which lets a save-named checkpoint skip the forward computation entirely
    on replay if the output was saved.
    """

    def __init__(self, fun, fwd, bwd, *, residuals_are_args=False, bwd_needs_mask=False):
        self.fun = fun
        self.fwd = fwd
        self.bwd = bwd
        self.residuals_are_args = residuals_are_args
        self.bwd_needs_mask = bwd_needs_mask
        functools.update_wrapper(self, fun)

    def __call__(self, *args):
        depth = state.custom_depth
        collectors = [c for c in state.collectors if c.base_depth == depth]
        indices = []
        for c in collectors:
            indices.append(c.n_calls)
            c.n_calls += 1
        skip = None
        replay = state.replays[-1] if state.replays else None
        if replay is not None and replay.base_depth == depth:
            idx = replay.n_calls
            replay.n_calls += 1
            if self.residuals_are_args:
                skip = replay.lookup(idx)
        flat, _ = tree_flatten(args)
        top = top_level(flat)
        if skip is not None and top is not None and top is not replay.trace:
            skip = None
        if top is None:
            if skip is not None:
                out = skip
            else:
                state.custom_depth += 1
                try:
                    out = self.fun(*args)
                finally:
                    state.custom_depth -= 1
        else:
            out = top.process_custom_vjp(self, args, skip)
        for c, idx in zip(collectors, indices):
            c.note_custom_output(idx, out)
        return out


def _per_arg_needs(in_def, needs):
    out = []
    i = 0
    for child in in_def.children:
        n = child.num_leaves
        out.append(any(needs[i:i + n]))
        i += n
    return tuple(out)


def _flatten_per_arg(in_def, cts):
    cts = tuple(cts)
    if len(cts) != len(in_def.children):
        raise ValueError(
            f"custom pullback returned {len(cts)} cotangents for {len(in_def.children)} arguments"
        )
    flat = []
    for child, ct in zip(in_def.children, cts):
        if ct is None:
            flat.extend([None] * child.num_leaves)
        else:
            leaves, td = tree_flatten(ct)
            if td != child:
                raise ShapeError(f"custom pullback cotangent structure {td} != argument {child}")
            flat.extend(leaves)
    return flat


# --------------------------------------------------------------------------
# Dense oracle

JACOBIAN_SIZE_CAP = 64


class JacobianMismatchError(AssertionError):
    """Forward-assembled and reverse-assembled Jacobians disagree."""


def dense_jacobian(f, x, *, size_cap: int = JACOBIAN_SIZE_CAP):
    """Materialise the Jacobian of ``f`` at ``x`` as an m x n matrix.

    Rows come from pullbacks of basis covectors; columns are independently
    assembled from forward-mode products with basis vectors and the two
    matrices must agree to 1e-12 (relative to the largest entry, floored at 1).
    """
    n = tree_size(x)
    if n > size_cap:
        raise SizeExceededError(f"input size {n} exceeds the oracle cap of {size_cap}")
    out, pullback, _ = vjp(f, x)
    m = tree_size(out)
    rows = np.empty((m, n))
    for i in range(m):
        rows[i] = ravel(pullback(basis_like(out, i))[0])
    cols = np.empty((m, n))
    for j in range(n):
        cols[:, j] = ravel(jvp(f, (x,), (basis_like(x, j),))[1])
    scale = max(1.0, float(np.max(np.abs(rows), initial=0.0)))
    if not np.allclose(rows, cols, rtol=0.0, atol=1e-12 * scale):
        gap = float(np.max(np.abs(rows - cols)))
        raise JacobianMismatchError(f"forward and reverse Jacobians differ by {gap:.3e}")
    return Tensor(rows)
