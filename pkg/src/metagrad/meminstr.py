"""Byte-level accounting of one differentiated execution.

Buffers are counted logically (elements x 8 bytes) under a reference-counting
allocator model: a tensor is live from construction until its last reference
disappears.  Inputs that exist before measurement starts, values marked as
checkpoints or named saves, and the returned outputs are static; everything
else allocated during the run (residuals, tangents, cotangents, transient
activations) is dynamic.
"""

from __future__ import annotations

import csv
import gc
import time
from collections import Counter
from dataclasses import dataclass, field

from ._state import state
from .core import base_buffers
from .tensor import Tensor
from .tree import tree_leaves


class LedgerNotActive(RuntimeError):
    """An accounting query was made while no ledger was recording."""


class DegenerateRatioError(ZeroDivisionError):
    """The denominator of a ratio metric is zero."""


class Ledger:
    def __init__(self, record_timeline: bool = True):
        self.record_timeline = record_timeline
        self.live_dynamic = 0
        self.live_static = 0
        self.peak_dynamic = 0
        self.marked_static = 0
        self.op_count = 0
        self.op_kinds: Counter = Counter()
        self.allocs = 0
        self.frees = 0
        self.residual_count = 0
        self.residual_bytes = 0
        self.timeline: list[tuple[int, int]] = []

    def _sample(self):
        if self.record_timeline:
            self.timeline.append((self.op_count, self.live_dynamic))

    def alloc(self, t: Tensor) -> None:
        t._ledger = self
        self.allocs += 1
        self.live_dynamic += t.nbytes
        if self.live_dynamic > self.peak_dynamic:
            self.peak_dynamic = self.live_dynamic
        self._sample()

    def release(self, t: Tensor) -> None:
        self.frees += 1
        if t._static:
            self.live_static -= t.nbytes
        else:
            self.live_dynamic -= t.nbytes
            self._sample()

    def mark_static(self, values) -> None:
        bufs: dict = {}
        for v in tree_leaves(values):
            base_buffers(v, bufs)
        moved = False
        for t in bufs.values():
            if t._ledger is self and not t._static:
                t._static = True
                self.live_dynamic -= t.nbytes
                self.live_static += t.nbytes
                self.marked_static += t.nbytes
                moved = True
        if moved:
            self._sample()

    def count_op(self, kind: str = "?") -> None:
        self.op_count += 1
        self.op_kinds[kind] += 1

    def note_residuals(self, values) -> None:
        bufs: dict = {}
        for v in values:
            if v is not None:
                base_buffers(v, bufs)
        self.residual_count += len(bufs)
        self.residual_bytes += sum(t.nbytes for t in bufs.values())


@dataclass
class MemoryReport:
    peak_dynamic_bytes: int
    static_bytes: int
    op_count: int
    timeline: list = field(default_factory=list, repr=False)
    # Cumulative bytes recorded as trace residuals; 0 for streaming evaluation.
    residual_bytes: int = 0
    residual_count: int = 0
    leaked_dynamic_bytes: int = 0
    wall_ms: float = 0.0
    op_kinds: dict = field(default_factory=dict, repr=False)

    def write_timeline(self, path) -> None:
        write_timeline_csv(self.timeline, path)


def current_ledger() -> Ledger:
    ledger = state.ledger
    if ledger is None:
        raise LedgerNotActive("no memory ledger is active")
    return ledger


def measure(run, *args, record_timeline: bool = True):
    """Execute ``run(*args)`` under a fresh ledger.

    Returns ``(result, MemoryReport)``.  Garbage collection is paused so that
    frees happen exactly when the last reference goes away.
    """
    input_bufs: dict = {}
    for leaf in tree_leaves(args):
        base_buffers(leaf, input_bufs)
    input_bytes = sum(t.nbytes for t in input_bufs.values())
    del input_bufs

    ledger = Ledger(record_timeline)
    prev = state.ledger
    was_enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    state.ledger = ledger
    start = time.perf_counter()
    try:
        result = run(*args)
        ledger.mark_static(result)
    finally:
        state.ledger = prev
        wall = (time.perf_counter() - start) * 1e3
        gc.collect()
        if was_enabled:
            gc.enable()
    report = MemoryReport(
        peak_dynamic_bytes=ledger.peak_dynamic,
        static_bytes=input_bytes + ledger.marked_static,
        op_count=ledger.op_count,
        timeline=ledger.timeline,
        residual_bytes=ledger.residual_bytes,
        residual_count=ledger.residual_count,
        leaked_dynamic_bytes=ledger.live_dynamic,
        wall_ms=wall,
        op_kinds=dict(ledger.op_kinds),
    )
    return result, report


@dataclass(frozen=True)
class RatioMetrics:
    dynamic_ratio: float
    opcount_ratio: float


def ratios(default: MemoryReport, mixed: MemoryReport) -> RatioMetrics:
    if mixed.peak_dynamic_bytes <= 0:
        raise DegenerateRatioError("mixed-mode run has zero dynamic peak")
    if mixed.op_count <= 0:
        raise DegenerateRatioError("mixed-mode run executed no operations")
    return RatioMetrics(
        dynamic_ratio=default.peak_dynamic_bytes / mixed.peak_dynamic_bytes,
        opcount_ratio=default.op_count / mixed.op_count,
    )


def dynamic_ratio_from_totals(default_total, mixed_total, static) -> float:
    """Ratio of peaks after subtracting the shared static footprint."""
    denom = mixed_total - static
    if denom <= 0:
        raise DegenerateRatioError("mixed-mode dynamic peak is not positive")
    return (default_total - static) / denom


def write_timeline_csv(timeline, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["instruction_index", "live_dynamic_bytes"])
        writer.writerows(timeline)
