"""Nested forward/reverse differentiation with memory accounting, and exact
meta-gradients of unrolled bilevel problems in reverse-over-reverse and
forward-over-reverse form."""

from .autodiff import (
    NO_REMAT,
    RECOMPUTE_ALL,
    CheckpointPolicy,
    Pullback,
    Trace,
    checkpoint,
    custom_vjp,
    dense_jacobian,
    grad,
    jvp,
    save_named,
    tag,
    value_and_grad,
    vjp,
)
from .bilevel import (
    InnerState,
    MetaProblem,
    NonFiniteError,
    UnrollConfig,
    inner_unroll,
    max_rel_diff,
    meta_grad,
    meta_grad_default,
    meta_grad_fd_oracle,
    meta_grad_mixed,
    meta_grad_recurrence_oracle,
    norm_rel_diff,
)
from .meminstr import LedgerNotActive, MemoryReport, RatioMetrics, measure, ratios
from .primitives import PRIMITIVES, eval_primitive
from .second_order import HvpMode, dense_hessian, dense_mixed, fwdrev_grad, hvp, mvp
from .tasks import (
    TaskConfig,
    make_hyperlr_task,
    make_loss_weighting_task,
    make_maml_task,
    make_residual_mlp_model,
    make_task,
    make_toy_map_task,
)
from .tensor import (
    DomainError,
    NondifferentiableError,
    PowDomainError,
    ShapeError,
    SizeExceededError,
    Tensor,
)

__all__ = [
    "CheckpointPolicy", "DomainError", "HvpMode", "InnerState", "LedgerNotActive",
    "MemoryReport", "MetaProblem", "NO_REMAT", "NonFiniteError", "NondifferentiableError",
    "PRIMITIVES", "PowDomainError", "Pullback", "RECOMPUTE_ALL", "RatioMetrics", "ShapeError",
    "SizeExceededError", "TaskConfig", "Tensor", "Trace", "UnrollConfig", "checkpoint",
    "custom_vjp", "dense_hessian", "dense_jacobian", "dense_mixed", "eval_primitive",
    "fwdrev_grad", "grad", "hvp", "inner_unroll", "jvp", "make_hyperlr_task",
    "make_loss_weighting_task", "make_maml_task", "make_residual_mlp_model", "make_task",
    "make_toy_map_task", "max_rel_diff", "measure", "meta_grad", "meta_grad_default",
    "meta_grad_fd_oracle", "meta_grad_mixed", "meta_grad_recurrence_oracle", "mvp",
    "norm_rel_diff", "ratios", "save_named", "tag", "value_and_grad", "vjp",
]
