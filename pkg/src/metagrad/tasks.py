"""Concrete bilevel problems: the recursive toy map and three residual-MLP setups."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any

import numpy as np

from . import primitives as P
from .autodiff import RECOMPUTE_ALL, checkpoint
from .bilevel import InnerState, MetaProblem
from .optim import fixed_lr_update, make_optimizer, per_parameter_lr_update
from .tensor import Tensor

TASKS = ("toy_map", "maml", "hyperlr", "loss_weighting")


@dataclass(frozen=True)
class TaskConfig:
    B: int = 8
    D: int = 16
    M_steps: int = 4
    T: int = 2
    R: int = 2
    S: int = 1
    seed: int = 0
    H: int = 16
    optimizer: str = "sgd"
    remat_blocks: bool = False
    lr: float = 0.05

    def __post_init__(self):
        for name in ("B", "D", "T", "R", "S", "H"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.M_steps < 0:
            raise ValueError(f"M_steps must be nonnegative, got {self.M_steps}")

    @property
    def rows(self) -> int:
        # Sequence positions are folded into the batch.
        return self.B * self.S

    def with_(self, **changes) -> "TaskConfig":
        return replace(self, **changes)


@dataclass
class Task:
    """A problem together with the data for one meta-step."""

    name: str
    config: TaskConfig
    problem: MetaProblem
    s0: InnerState
    batches: list
    val_batch: Any


def _rng(cfg: TaskConfig, salt: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, salt])


def _eta_as_theta(eta, s0):
    return InnerState(eta, s0.opt_state)


# -- recursive toy map -------------------------------------------------------

TOY_MAP_LR = 1e-3


def toy_map_forward(theta, x, m_steps: int):
    """``y_0 = x theta``; ``y_i = i * (2 + sin y_{i-1}) ** cos y_{i-1}``."""
    (w,) = theta
    y = P.matmul(x, w)
    for i in range(1, m_steps + 1):
        y = float(i) * P.pow(2.0 + P.sin(y), P.cos(y))
    return y


def make_toy_map_task(cfg: TaskConfig) -> Task:
    if cfg.M_steps < 1:
        raise ValueError("the toy map needs M_steps >= 1")
    rng = _rng(cfg, 1)
    rows, d = cfg.rows, cfg.D

    def batch():
        return (Tensor(rng.normal(size=(rows, d))), Tensor(rng.normal(size=(rows, d))))

    def loss(theta, batch_):
        x, target = batch_
        return P.square_error(toy_map_forward(theta, x, cfg.M_steps), target)

    theta0 = (Tensor(rng.normal(size=(d, d)) / np.sqrt(d)),)
    batches = [batch() for _ in range(cfg.T)]
    val_batch = batch()
    opt = make_optimizer(cfg.optimizer)
    problem = MetaProblem(
        inner_loss=lambda theta, eta, x: loss(theta, x),
        val_loss=loss,
        update=fixed_lr_update(opt, TOY_MAP_LR),
        eta=theta0,
        initial_state=_eta_as_theta,
        name="toy_map",
    )
    return Task("toy_map", cfg, problem, InnerState(theta0, opt.init(theta0)), batches, val_batch)


# -- residual MLP --------------------------------------------------------------


def _block(h, w1, w2):
    return h + P.matmul(P.tanh(P.matmul(h, w1)), w2)


@dataclass(frozen=True)
class ResidualMLP:
    """``R`` blocks ``h + tanh(h W1) W2`` followed by a linear readout.

    Parameters are a flat tuple ``(W1_1, W2_1, ..., W1_R, W2_R, head)``.
    With ``remat`` every block is checkpointed (recompute-all).
    """

    R: int
    remat: bool = False

    def features(self, theta, x):
        block = checkpoint(_block, RECOMPUTE_ALL) if self.remat else _block
        h = x
        for r in range(self.R):
            h = block(h, theta[2 * r], theta[2 * r + 1])
        return h

    def __call__(self, theta, x):
        return P.matmul(self.features(theta, x), theta[-1])

    def loss(self, theta, batch):
        x, y = batch
        return P.square_error(self(theta, x), y)

    def per_example_error(self, theta, batch):
        x, y = batch
        return P.square(self(theta, x) - y)


def make_residual_mlp_model(cfg: TaskConfig) -> ResidualMLP:
    if cfg.R < 1:
        raise ValueError("a residual MLP needs R >= 1")
    return ResidualMLP(cfg.R, cfg.remat_blocks)


def init_mlp_params(cfg: TaskConfig, rng: np.random.Generator) -> tuple:
    d, h = cfg.D, cfg.H
    params = []
    for _ in range(cfg.R):
        params.append(Tensor(rng.normal(size=(d, h)) / np.sqrt(d)))
        params.append(Tensor(0.5 * rng.normal(size=(h, d)) / np.sqrt(h)))
    params.append(Tensor(rng.normal(size=(d, 1)) / np.sqrt(d)))
    return tuple(params)


def _regression_data(cfg: TaskConfig, rng: np.random.Generator):
    # Targets come from a fixed random linear teacher plus a smooth term.
    teacher = rng.normal(size=(cfg.D, 1)) / np.sqrt(cfg.D)

    def batch():
        x = rng.normal(size=(cfg.rows, cfg.D))
        y = x @ teacher + 0.1 * np.sin(x[:, :1])
        return (Tensor(x), Tensor(y))

    return [batch() for _ in range(cfg.T)], batch()


def make_maml_task(cfg: TaskConfig) -> Task:
    """The meta-parameters are the initial inner parameters."""
    rng = _rng(cfg, 2)
    model = make_residual_mlp_model(cfg)
    theta0 = init_mlp_params(cfg, rng)
    batches, val_batch = _regression_data(cfg, rng)
    opt = make_optimizer(cfg.optimizer)
    problem = MetaProblem(
        inner_loss=lambda theta, eta, x: model.loss(theta, x),
        val_loss=model.loss,
        update=fixed_lr_update(opt, cfg.lr),
        eta=theta0,
        initial_state=_eta_as_theta,
        name="maml",
    )
    return Task("maml", cfg, problem, InnerState(theta0, opt.init(theta0)), batches, val_batch)


def make_hyperlr_task(cfg: TaskConfig) -> Task:
    """The meta-parameters are per-parameter learning rates shaped like theta."""
    rng = _rng(cfg, 3)
    model = make_residual_mlp_model(cfg)
    theta0 = init_mlp_params(cfg, rng)
    batches, val_batch = _regression_data(cfg, rng)
    lrs = tuple(Tensor(cfg.lr * (1.0 + 0.1 * rng.uniform(-1, 1, size=t.shape))) for t in theta0)
    opt = make_optimizer(cfg.optimizer)
    problem = MetaProblem(
        inner_loss=lambda theta, eta, x: model.loss(theta, x),
        val_loss=model.loss,
        update=per_parameter_lr_update(opt),
        eta=lrs,
        name="hyperlr",
    )
    return Task("hyperlr", cfg, problem, InnerState(theta0, opt.init(theta0)), batches, val_batch)


def example_weights(eta, x):
    """Per-example weights ``sigmoid(x w + b)``, shape rows x 1."""
    w, b = eta
    return P.sigmoid(P.matmul(x, w) + b)


def make_loss_weighting_task(cfg: TaskConfig) -> Task:
    """Inner loss is the mean of per-example errors weighted by a learned gate."""
    rng = _rng(cfg, 4)
    model = make_residual_mlp_model(cfg)
    theta0 = init_mlp_params(cfg, rng)
    batches, val_batch = _regression_data(cfg, rng)
    eta = (Tensor(rng.normal(size=(cfg.D, 1)) / np.sqrt(cfg.D)), Tensor(0.0))

    def inner_loss(theta, eta_, batch):
        x, _ = batch
        return P.mean(example_weights(eta_, x) * model.per_example_error(theta, batch))

    opt = make_optimizer(cfg.optimizer)
    problem = MetaProblem(
        inner_loss=inner_loss,
        val_loss=model.loss,
        update=fixed_lr_update(opt, cfg.lr),
        eta=eta,
        name="loss_weighting",
    )
    return Task("loss_weighting", cfg, problem, InnerState(theta0, opt.init(theta0)), batches, val_batch)


_MAKERS = {
    "toy_map": make_toy_map_task,
    "maml": make_maml_task,
    "hyperlr": make_hyperlr_task,
    "loss_weighting": make_loss_weighting_task,
}


def make_task(name: str, cfg: TaskConfig) -> Task:
    try:
        maker = _MAKERS[name]
    except KeyError:
        raise ValueError(f"unknown task {name!r}; expected one of {TASKS}") from None
    return maker(cfg)
