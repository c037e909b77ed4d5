"""Meta-gradients of truncated inner-loop unrolls.

Two exact algorithms are provided.  The default one differentiates the whole
unroll in reverse mode, so every inner gradient is itself differentiated
reverse-over-reverse.  The mixed-mode one computes inner gradients with
``fwdrev_grad``; its backward pass differentiates them forward-over-reverse.
Two independent oracles (a dense total-derivative recurrence and central
differences) check both.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple

import numpy as np

from .autodiff import (
    NO_REMAT,
    RECOMPUTE_ALL,
    CheckpointPolicy,
    checkpoint,
    dense_jacobian,
    grad,
    save_named,
    tag,
)
from .core import concrete
from .meminstr import measure
from .second_order import dense_hessian, dense_mixed, fwdrev_grad
from .tensor import SizeExceededError
from .tree import tree_leaves, tree_map
from .vec import ravel, tree_size, unravel_like

INNER_GRADS = "inner_grads"
MODES = ("default", "mixflow")


class NonFiniteError(FloatingPointError):
    """The inner loop produced NaN or infinite values."""


class InnerState(NamedTuple):
    theta: Any
    opt_state: Any = ()


def _identity_init(eta, s0):
    return s0


@dataclass(frozen=True)
class MetaProblem:
    """Inner loss ``L(theta, eta, x)``, validation loss ``V(theta, y)`` and
    update ``(g, theta, opt_state, eta, x, step) -> (theta', opt_state')``.

    ``initial_state(eta, s0)`` builds the starting inner state; problems that
    learn the initialisation map ``eta`` to ``theta``.
    """

    inner_loss: Callable
    val_loss: Callable
    update: Callable
    eta: Any
    initial_state: Callable = _identity_init
    name: str = "problem"


@dataclass(frozen=True)
class UnrollConfig:
    T: int
    remat: CheckpointPolicy = field(default=RECOMPUTE_ALL)
    save_inner_grads: bool = False
    mode: str = "default"

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 1:
            raise ValueError(f"T must be a positive integer, got {self.T}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.save_inner_grads and self.remat.mode == "none":
            raise ValueError("save_inner_grads requires per-step rematerialisation")

    def step_policy(self) -> CheckpointPolicy:
        if self.remat.mode == "none":
            return NO_REMAT
        names = set(self.remat.saved_names)
        if self.save_inner_grads:
            names.add(INNER_GRADS)
        return save_named(*names) if names else RECOMPUTE_ALL


def _check_finite(tree, what, step):
    for leaf in tree_leaves(tree):
        if not np.all(np.isfinite(concrete(leaf).data)):
            raise NonFiniteError(f"non-finite {what} after inner step {step}")


def _make_step(problem: MetaProblem, config: UnrollConfig, step: int):
    grad_fn = fwdrev_grad(problem.inner_loss) if config.mode == "mixflow" else grad(problem.inner_loss)

    def inner_step(theta, opt_state, eta, x):
        g = grad_fn(theta, eta, x)
        if config.save_inner_grads:
            g = tree_map(lambda t: tag(INNER_GRADS, t), g)
        return problem.update(g, theta, opt_state, eta, x, step)

    return checkpoint(inner_step, config.step_policy(), static=True)


def _unroll(problem, s0, batches, eta, config):
    theta, opt_state = problem.initial_state(eta, s0)
    for i, x in enumerate(batches, start=1):
        theta, opt_state = _make_step(problem, config, i)(theta, opt_state, eta, x)
        _check_finite(theta, "inner parameters", i)
    return InnerState(theta, opt_state)


def inner_unroll(problem: MetaProblem, s0: InnerState, batches, eta=None,
                 config: UnrollConfig | None = None) -> InnerState:
    """Apply the update rule once per batch, starting from ``initial_state``."""
    eta = problem.eta if eta is None else eta
    config = config or UnrollConfig(T=max(len(batches), 1), remat=NO_REMAT)
    if len(batches) != config.T:
        raise ValueError(f"expected {config.T} batches, got {len(batches)}")
    return _unroll(problem, s0, batches, eta, config)


def validation_objective(problem, s0, batches, val_batch, config):
    """The meta-objective ``eta -> V(theta_T(eta), val_batch)``."""
    if len(batches) != config.T:
        raise ValueError(f"expected {config.T} batches, got {len(batches)}")

    def objective(eta):
        final = _unroll(problem, s0, batches, eta, config)
        value = problem.val_loss(final.theta, val_batch)
        _check_finite(value, "validation loss", config.T)
        return value

    return objective


def _meta_grad(problem, s0, batches, val_batch, config, with_report, check_finite):
    objective = validation_objective(problem, s0, batches, val_batch, config)
    run = grad(objective)
    if check_finite:
        result = measure(run, problem.eta) if with_report else run(problem.eta)
        _check_finite(result[0] if with_report else result, "meta-gradient", config.T)
        return result
    # Overflow is expected and tolerated here (e.g. memory-only measurements).
    with np.errstate(all="ignore"):
        return measure(run, problem.eta) if with_report else run(problem.eta)


def meta_grad(problem, s0, batches, val_batch, config: UnrollConfig, *,
              with_report: bool = False, check_finite: bool = True):
    """dV/d eta for one meta-step, by the algorithm named in ``config.mode``.

    With ``with_report`` the run is measured and ``(gradient, MemoryReport)``
    is returned.  Non-finite values abort with ``NonFiniteError`` unless
    ``check_finite`` is off.
    """
    return _meta_grad(problem, s0, batches, val_batch, config, with_report, check_finite)


def meta_grad_default(problem, s0, batches, val_batch, config: UnrollConfig, **kwargs):
    """dV/d eta with inner gradients differentiated reverse-over-reverse."""
    if config.mode != "default":
        raise ValueError("meta_grad_default needs config.mode == 'default'")
    return meta_grad(problem, s0, batches, val_batch, config, **kwargs)


def meta_grad_mixed(problem, s0, batches, val_batch, config: UnrollConfig, **kwargs):
    """dV/d eta with inner gradients differentiated forward-over-reverse."""
    if config.mode != "mixflow":
        raise ValueError("meta_grad_mixed needs config.mode == 'mixflow'")
    return meta_grad(problem, s0, batches, val_batch, config, **kwargs)


# -- oracles -------------------------------------------------------------------

ORACLE_CAPS = {"theta": 8, "opt_state": 16, "eta": 8}


def meta_grad_recurrence_oracle(problem, s0, batches, val_batch, *, caps=ORACLE_CAPS):
    """Dense forward recurrence of total derivatives through the unroll.

    With ``Z_i = d(theta_i, opt_state_i)/d eta`` stacked as a matrix,
    ``Z_{i+1} = dU/dtheta Z_theta + dU/dg (H Z_theta + X) + dU/dopt Z_opt + dU/deta``
    where ``H`` is the inner Hessian and ``X`` the mixed matrix
    ``d(grad_theta L)/d eta``, every factor materialised with basis vectors.
    Finally ``dV/d eta = grad_theta V(theta_T) Z_theta``.
    """
    eta = problem.eta
    theta0, opt0 = problem.initial_state(eta, s0)
    p, o, m = tree_size(theta0), tree_size(opt0), tree_size(eta)
    if p > caps["theta"] or o > caps["opt_state"] or m > caps["eta"]:
        raise SizeExceededError(f"oracle sizes (P={p}, O={o}, M={m}) exceed caps {caps}")

    # Base case: Jacobian of the initial state with respect to eta.
    def init_flat(e):
        return problem.initial_state(e, s0)

    z = dense_jacobian(init_flat, eta).data if p + o else np.zeros((0, m))
    theta, opt_state = theta0, opt0
    for step, x in enumerate(batches, start=1):
        g = grad(problem.inner_loss)(theta, eta, x)
        args = (g, theta, opt_state, eta)

        def partial(k, args=args, x=x, step=step):
            def f(v):
                full = list(args)
                full[k] = v
                return problem.update(*full, x, step)

            return dense_jacobian(f, args[k]).data if tree_size(args[k]) else np.zeros((p + o, 0))

        j_g, j_theta, j_opt, j_eta = (partial(k) for k in range(4))
        hess = dense_hessian(lambda t: problem.inner_loss(t, eta, x), theta).data
        mixed = dense_mixed(lambda e, t: problem.inner_loss(t, e, x), eta, theta).data
        z_theta, z_opt = z[:p], z[p:]
        z = j_theta @ z_theta + j_g @ (hess @ z_theta + mixed) + j_opt @ z_opt + j_eta
        theta, opt_state = problem.update(g, theta, opt_state, eta, x, step)
    val_grad = ravel(grad(problem.val_loss)(theta, val_batch))
    return unravel_like(val_grad @ z[:p], eta)


def meta_grad_fd_oracle(problem, s0, batches, val_batch, h: float = 1e-5, *, max_size: int = 64):
    """Central differences of the validation objective, one coordinate at a time."""
    eta = problem.eta
    m = tree_size(eta)
    if m > max_size:
        raise SizeExceededError(f"|eta| = {m} exceeds the finite-difference cap of {max_size}")
    config = UnrollConfig(T=len(batches), remat=NO_REMAT)
    objective = validation_objective(problem, s0, batches, val_batch, config)
    base = ravel(eta)
    out = np.empty(m)
    for j in range(m):
        plus, minus = base.copy(), base.copy()
        plus[j] += h
        minus[j] -= h
        f_plus = float(objective(unravel_like(plus, eta)))
        f_minus = float(objective(unravel_like(minus, eta)))
        out[j] = (f_plus - f_minus) / (2.0 * h)
    return unravel_like(out, eta)


# -- comparison helpers ----------------------------------------------------------

REL_FLOOR = 1e-12


def max_rel_diff(a, b, floor: float = REL_FLOOR) -> float:
    """Largest elementwise ``|a - b| / max(|a|, |b|, floor)``."""
    va, vb = ravel(a), ravel(b)
    if va.shape != vb.shape:
        raise ValueError(f"size mismatch {va.shape} vs {vb.shape}")
    if va.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(va), np.abs(vb)), floor)
    return float(np.max(np.abs(va - vb) / denom))


def norm_rel_diff(a, b, floor: float = REL_FLOOR) -> float:
    """``||a - b|| / max(||a||, ||b||, floor)`` over all elements."""
    va, vb = ravel(a), ravel(b)
    denom = max(np.linalg.norm(va), np.linalg.norm(vb), floor)
    return float(np.linalg.norm(va - vb) / denom)
