"""Self-verification suites run by ``metagrad verify``.

Each suite checks one property against an independent route and reports
pass/fail with the worst observed error.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import primitives as P
from .autodiff import NO_REMAT, RECOMPUTE_ALL, grad
from .bilevel import (
    UnrollConfig,
    max_rel_diff,
    meta_grad,
    meta_grad_fd_oracle,
    meta_grad_recurrence_oracle,
    norm_rel_diff,
)
from .second_order import HvpMode, dense_hessian, dense_mixed, hvp
from .tasks import TASKS, TaskConfig, make_task
from .tensor import Tensor
from .vec import ravel

OPTIMIZER_NAMES = ("sgd", "sgd_momentum", "adaptive")

# Oracle-scale configuration: |theta| = 6 for the MLP tasks, 4 for the toy map.
ORACLE_TASK_CONFIG = TaskConfig(B=4, D=2, H=1, R=1, M_steps=2, T=2)
EQUIVALENCE_TASK_CONFIG = TaskConfig(B=4, D=3, H=4, R=2, M_steps=3, T=1)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    worst: float
    tolerance: float
    cases: int

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: worst {self.worst:.3e} (tol {self.tolerance:g}, {self.cases} cases)"


def random_smooth_loss(rng: np.random.Generator, n: int) -> Callable:
    """A random scalar function of an n-vector mixing sin/cos/exp/pow/matmul."""
    a = Tensor(rng.normal(size=(n, n)) / np.sqrt(n))
    c = Tensor(rng.normal(size=(n,)))

    def loss(x):
        h = P.reshape(P.matmul(a, P.reshape(x, (n, 1))), (n,))
        u = P.sin(h) * P.cos(x + c) + P.exp(0.3 * P.sin(x))
        v = P.pow(2.0 + P.sin(h), P.cos(x))
        return P.sum(u * u) + P.sum(v)

    return loss


def _hvp_cases(seed: int, count: int):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(2, 21))
        yield random_smooth_loss(rng, n), Tensor(rng.normal(size=n)), Tensor(rng.normal(size=n))


def suite_hvp_mode_agreement(seed=0, count=8) -> SuiteResult:
    worst = 0.0
    for loss, x, v in _hvp_cases(seed, count):
        outs = [hvp(loss, x, v, mode) for mode in HvpMode]
        for a, b in itertools.combinations(outs, 2):
            worst = max(worst, max_rel_diff(a, b))
    return SuiteResult("hvp-mode-agreement", worst <= 1e-10, worst, 1e-10, count)


def suite_hvp_dense_oracle(seed=1, count=6) -> SuiteResult:
    worst = 0.0
    for loss, x, v in _hvp_cases(seed, count):
        # Columns assembled by a mode other than the one being checked.
        hess = dense_hessian(loss, x, mode=HvpMode.REVERSE_OVER_FORWARD).data
        expected = Tensor(hess @ v.data)
        for mode in HvpMode:
            worst = max(worst, max_rel_diff(hvp(loss, x, v, mode), expected))
    return SuiteResult("hvp-dense-oracle", worst <= 1e-10, worst, 1e-10, count)


def suite_hvp_finite_difference(seed=2, count=6, h=1e-5) -> SuiteResult:
    worst = 0.0
    for loss, x, v in _hvp_cases(seed, count):
        g = grad(loss)
        fd = (ravel(g(x + h * v)) - ravel(g(x - h * v))) / (2 * h)
        worst = max(worst, norm_rel_diff(hvp(loss, x, v), Tensor(fd)))
    return SuiteResult("hvp-finite-difference", worst <= 1e-5, worst, 1e-5, count)


def suite_hvp_schwarz(seed=3, count=6) -> SuiteResult:
    worst = 0.0
    for loss, x, _ in _hvp_cases(seed, count):
        hess = dense_hessian(loss, x).data
        worst = max(worst, float(np.max(np.abs(hess - hess.T))))
        # Mixed matrices: split the input into (theta, eta) and swap roles.
        k = x.size // 2
        theta, eta = Tensor(x.data[:k]), Tensor(x.data[k:])

        def joined(t, e, loss=loss):
            return loss(_concat(t, e))

        forward = dense_mixed(joined, theta, eta).data
        swapped = dense_mixed(lambda e, t: joined(t, e), eta, theta).data
        worst = max(worst, float(np.max(np.abs(forward - swapped.T))))
    return SuiteResult("hvp-schwarz", worst <= 1e-10, worst, 1e-10, count)


def _concat(a, b):
    # Concatenation expressed with differentiable primitives: a @ [I 0] + b @ [0 I].
    n, m = a.size, b.size
    left = Tensor(np.eye(n, n + m))
    right = Tensor(np.eye(m, n + m, k=n))
    row = P.matmul(P.reshape(a, (1, n)), left) + P.matmul(P.reshape(b, (1, m)), right)
    return P.reshape(row, (n + m,))


def _both_modes(task, config_kwargs):
    grads = {}
    for mode in ("default", "mixflow"):
        cfg = UnrollConfig(task.config.T, mode=mode, **config_kwargs)
        grads[mode] = meta_grad(task.problem, task.s0, task.batches, task.val_batch, cfg)
    return grads


def suite_meta_equivalence(seeds=range(2), Ts=(1, 2, 3, 4), base=EQUIVALENCE_TASK_CONFIG) -> SuiteResult:
    worst, cases = 0.0, 0
    for name, opt, T, seed in itertools.product(TASKS, OPTIMIZER_NAMES, Ts, seeds):
        task = make_task(name, base.with_(optimizer=opt, T=T, seed=seed))
        g = _both_modes(task, {"save_inner_grads": True})
        worst = max(worst, max_rel_diff(g["default"], g["mixflow"]))
        cases += 1
    return SuiteResult("meta-equivalence", worst <= 1e-9, worst, 1e-9, cases)


def suite_recurrence_oracle(seeds=range(1), Ts=(1, 3), base=ORACLE_TASK_CONFIG) -> SuiteResult:
    worst, cases = 0.0, 0
    for name, opt, T, seed in itertools.product(TASKS, OPTIMIZER_NAMES, Ts, seeds):
        task = make_task(name, base.with_(optimizer=opt, T=T, seed=seed))
        oracle = meta_grad_recurrence_oracle(task.problem, task.s0, task.batches, task.val_batch)
        for g in _both_modes(task, {}).values():
            worst = max(worst, max_rel_diff(g, oracle))
        cases += 1
    return SuiteResult("recurrence-oracle", worst <= 1e-8, worst, 1e-8, cases)


def suite_finite_difference(seeds=range(1), base=ORACLE_TASK_CONFIG) -> SuiteResult:
    worst, cases = 0.0, 0
    for name, opt, seed in itertools.product(TASKS, OPTIMIZER_NAMES, seeds):
        task = make_task(name, base.with_(optimizer=opt, seed=seed))
        fd = meta_grad_fd_oracle(task.problem, task.s0, task.batches, task.val_batch, h=1e-5)
        for g in _both_modes(task, {}).values():
            worst = max(worst, norm_rel_diff(g, fd))
        cases += 1
    return SuiteResult("finite-difference", worst <= 1e-5, worst, 1e-5, cases)


def suite_checkpoint_invariance(base=EQUIVALENCE_TASK_CONFIG.with_(T=2)) -> SuiteResult:
    worst, cases = 0.0, 0
    variants = [
        {"remat": NO_REMAT, "save_inner_grads": False},
        {"remat": RECOMPUTE_ALL, "save_inner_grads": False},
        {"remat": RECOMPUTE_ALL, "save_inner_grads": True},
    ]
    for name, mode in itertools.product(TASKS, ("default", "mixflow")):
        reference = None
        for blocks in (False, True):
            task = make_task(name, base.with_(remat_blocks=blocks))
            for kw in variants:
                cfg = UnrollConfig(task.config.T, mode=mode, **kw)
                g = meta_grad(task.problem, task.s0, task.batches, task.val_batch, cfg)
                if reference is None:
                    reference = g
                worst = max(worst, max_rel_diff(g, reference))
                cases += 1
    return SuiteResult("checkpoint-invariance", worst < 1e-12, worst, 1e-12, cases)


SUITES: dict[str, Callable[[], SuiteResult]] = {
    "hvp-mode-agreement": suite_hvp_mode_agreement,
    "hvp-dense-oracle": suite_hvp_dense_oracle,
    "hvp-finite-difference": suite_hvp_finite_difference,
    "hvp-schwarz": suite_hvp_schwarz,
    "meta-equivalence": suite_meta_equivalence,
    "recurrence-oracle": suite_recurrence_oracle,
    "finite-difference": suite_finite_difference,
    "checkpoint-invariance": suite_checkpoint_invariance,
}


def select_suites(name_filter: str | None) -> list[str]:
    if not name_filter:
        return list(SUITES)
    return [name for name in SUITES if name_filter in name]
