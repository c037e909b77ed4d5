"""Sweeps and the ablation grid: one measured meta-gradient per result row.

Config files are flat ``key = value`` lines; list-valued axes are
comma-separated.  Lines starting with ``#`` are comments::

    task = maml
    mode = both
    T = 2
    B = 256
    D = 2
    H = 128
    M_steps = 4
    R = 2, 4, 8, 16
    optimizer = sgd
    remat = true
    save_inner_grads = true
    seed = 0
    out = results.csv

``remat`` checkpoints every residual block; every inner step is always
checkpointed, and ``save_inner_grads`` keeps the inner gradients instead of
recomputing them.
"""

from __future__ import annotations

import configparser
import csv
import io
import itertools
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields

from .bilevel import UnrollConfig, max_rel_diff, meta_grad
from .tasks import TASKS, TaskConfig, make_task
from .optim import OPTIMIZERS
from .vec import ravel

AXES = ("T", "B", "D", "M_steps", "R")
MODE_CHOICES = ("default", "mixflow", "both")
_BOOL = {"true": True, "yes": True, "on": True, "1": True,
         "false": False, "no": False, "off": False, "0": False}


class ConfigError(ValueError):
    """The bench configuration is malformed."""


@dataclass(frozen=True)
class BenchConfig:
    task: str = "maml"
    mode: str = "both"
    T: tuple = (2,)
    B: tuple = (8,)
    D: tuple = (16,)
    M_steps: tuple = (4,)
    R: tuple = (2,)
    H: int = 16
    optimizer: str = "sgd"
    remat: bool = True
    save_inner_grads: bool = True
    seed: int = 0
    out: str | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.mode not in MODE_CHOICES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODE_CHOICES}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        for axis in AXES:
            values = getattr(self, axis)
            if not values:
                raise ConfigError(f"axis {axis} is empty")
            if any(v < 1 for v in values):
                raise ConfigError(f"axis {axis} has out-of-range values {values}")
        if self.H < 1:
            raise ConfigError("H must be positive")

    def modes(self) -> tuple[str, ...]:
        return ("default", "mixflow") if self.mode == "both" else (self.mode,)

    def points(self):
        """Sweep points in lexicographic order over the axes."""
        for values in itertools.product(*(sorted(set(getattr(self, a))) for a in AXES)):
            yield dict(zip(AXES, values))


def _int_list(key, raw) -> tuple:
    items = [item.strip() for item in raw.split(",")]
    if not raw.strip() or any(not item for item in items):
        raise ConfigError(f"axis {key} is empty or has an empty entry")
    try:
        return tuple(int(item) for item in items)
    except ValueError:
        raise ConfigError(f"axis {key} must hold integers, got {raw!r}") from None


def parse_config(text: str) -> BenchConfig:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",), delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string("[bench]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    raw = dict(parser["bench"])
    known = {f.name for f in fields(BenchConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs: dict = {}
    for key, value in raw.items():
        value = value.strip()
        if key in AXES:
            kwargs[key] = _int_list(key, value)
        elif key in ("H", "seed"):
            try:
                kwargs[key] = int(value)
            except ValueError:
                raise ConfigError(f"{key} must be an integer, got {value!r}") from None
        elif key in ("remat", "save_inner_grads"):
            if value.lower() not in _BOOL:
                raise ConfigError(f"{key} must be a boolean, got {value!r}")
            kwargs[key] = _BOOL[value.lower()]
        else:
            kwargs[key] = value or None
    return BenchConfig(**kwargs)


def load_config(path) -> BenchConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


@dataclass
class ResultRow:
    task: str
    mode: str
    T: int
    B: int
    D: int
    M_steps: int
    R: int
    optimizer: str
    remat: bool
    save_inner_grads: bool
    peak_dynamic_bytes: int
    static_bytes: int
    op_count: int
    wall_ms: str
    grad_checksum: str
    grad_max_rel_diff_vs_default: str


FIELDS = [f.name for f in fields(ResultRow)]


@dataclass(frozen=True)
class Point:
    task: str
    mode: str
    T: int
    B: int
    D: int
    M_steps: int
    R: int
    H: int
    optimizer: str
    remat: bool
    save_inner_grads: bool
    seed: int


def run_point(point: Point, timeline_path: str | None = None):
    """Measure one meta-gradient.  Returns ``(gradient vector, report)``."""
    cfg = TaskConfig(B=point.B, D=point.D, M_steps=point.M_steps, T=point.T, R=point.R,
                     H=point.H, seed=point.seed, optimizer=point.optimizer,
                     remat_blocks=point.remat)
    task = make_task(point.task, cfg)
    unroll = UnrollConfig(point.T, mode=point.mode, save_inner_grads=point.save_inner_grads)
    grad, report = meta_grad(task.problem, task.s0, task.batches, task.val_batch, unroll,
                             with_report=True, check_finite=False)
    if timeline_path:
        report.write_timeline(timeline_path)
    report.timeline = []
    return ravel(grad), report


def _run_job(args):
    point, timeline_path = args
    return run_point(point, timeline_path)


def _timeline_name(point: Point) -> str:
    return (f"{point.task}_{point.mode}_T{point.T}_B{point.B}_D{point.D}_M{point.M_steps}"
            f"_R{point.R}_{point.optimizer}_remat{int(point.remat)}_save{int(point.save_inner_grads)}.csv")


def execute(points: list[Point], jobs: int = 1, timeline_dir: str | None = None,
            wall_clock: bool = False) -> list[ResultRow]:
    """Run every point and assemble rows in input order.

    Mixed-mode rows report their largest relative difference against the
    default-mode row of the same configuration when one is present.
    """
    paths = [os.path.join(timeline_dir, _timeline_name(p)) if timeline_dir else None for p in points]
    jobs_args = list(zip(points, paths))
    if jobs > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_job, jobs_args))
    else:
        results = [_run_job(a) for a in jobs_args]

    defaults = {}
    for point, (grad, _) in zip(points, results):
        if point.mode == "default":
            defaults[_twin_key(point)] = grad
    rows = []
    for point, (grad, report) in zip(points, results):
        twin = defaults.get(_twin_key(point))
        if point.mode == "default":
            diff = "0"
        elif twin is not None:
            diff = f"{max_rel_diff(grad, twin):.3e}"
        else:
            diff = ""
        rows.append(ResultRow(
            task=point.task, mode=point.mode, T=point.T, B=point.B, D=point.D,
            M_steps=point.M_steps, R=point.R, optimizer=point.optimizer,
            remat=point.remat, save_inner_grads=point.save_inner_grads,
            peak_dynamic_bytes=report.peak_dynamic_bytes, static_bytes=report.static_bytes,
            op_count=report.op_count,
            wall_ms=f"{report.wall_ms:.3f}" if wall_clock else "",
            grad_checksum=f"{float(grad.sum()):.17g}",
            grad_max_rel_diff_vs_default=diff,
        ))
    return rows


def _twin_key(point: Point):
    return (point.task, point.T, point.B, point.D, point.M_steps, point.R, point.optimizer,
            point.remat, point.save_inner_grads, point.seed)


def sweep_points(config: BenchConfig, seed: int | None = None) -> list[Point]:
    seed = config.seed if seed is None else seed
    out = []
    for axes in config.points():
        for mode in config.modes():
            out.append(Point(task=config.task, mode=mode, H=config.H, optimizer=config.optimizer,
                             remat=config.remat, save_inner_grads=config.save_inner_grads,
                             seed=seed, **axes))
    return out


# Fixed MAML residual-MLP configuration for the ablation grid: many rows and a
# wide hidden layer relative to the residual width, so activations dominate
# parameter-sized buffers as they do at scale.
ABLATION_POINT = dict(task="maml", T=2, B=256, D=2, M_steps=1, R=8, H=128, optimizer="sgd")


def ablation_points(seed: int = 0) -> list[Point]:
    return [
        Point(mode=mode, remat=remat, save_inner_grads=save, seed=seed, **ABLATION_POINT)
        for mode in ("default", "mixflow")
        for remat in (False, True)
        for save in (False, True)
    ]


def format_csv(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        record = asdict(row)
        record["remat"] = str(row.remat).lower()
        record["save_inner_grads"] = str(row.save_inner_grads).lower()
        writer.writerow(record)
    return buf.getvalue()


def write_csv(rows: list[ResultRow], path: str | None) -> None:
    text = format_csv(rows)
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def checksums_agree(rows: list[ResultRow], tol: float = 1e-9) -> bool:
    values = [float(r.grad_checksum) for r in rows]
    if not all(math.isfinite(v) for v in values):
        return False
    ref = values[0]
    return all(abs(v - ref) <= tol * max(abs(v), abs(ref), 1e-12) for v in values)
