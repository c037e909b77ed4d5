import csv

import numpy as np
import pytest

from metagrad import primitives as P
from metagrad.autodiff import grad, jvp, vjp
from metagrad.bilevel import UnrollConfig, meta_grad
from metagrad.meminstr import (
    DegenerateRatioError,
    LedgerNotActive,
    MemoryReport,
    current_ledger,
    dynamic_ratio_from_totals,
    measure,
    ratios,
)
from metagrad.tasks import TaskConfig, make_task
from metagrad.tensor import Tensor


def chain(x, m=8):
    for _ in range(m):
        x = P.sin(x)
    return x


def test_plain_evaluation_keeps_no_residuals():
    _, report = measure(chain, Tensor(np.ones(100)))
    assert report.residual_bytes == 0
    assert report.residual_count == 0
    # Streaming evaluation holds at most the input-sized buffer in flight.
    assert report.peak_dynamic_bytes <= 2 * 800


def test_vjp_over_chain_stores_one_residual_per_op():
    x = Tensor(np.ones(50))

    def run(v):
        _, pullback, trace = vjp(chain, v)
        return trace.residual_bytes

    residual_bytes, report = measure(run, x)
    assert residual_bytes == 8 * x.nbytes
    assert report.residual_bytes == 8 * x.nbytes
    assert report.residual_count == 8


def test_ratio_examples():
    assert dynamic_ratio_from_totals(100, 30, 20) == 8.0
    report = MemoryReport(peak_dynamic_bytes=80, static_bytes=20, op_count=10)
    assert ratios(report, report).dynamic_ratio == 1.0
    assert ratios(report, report).opcount_ratio == 1.0


def test_degenerate_ratio():
    ok = MemoryReport(peak_dynamic_bytes=80, static_bytes=20, op_count=10)
    zero = MemoryReport(peak_dynamic_bytes=0, static_bytes=20, op_count=10)
    with pytest.raises(DegenerateRatioError):
        ratios(ok, zero)
    with pytest.raises(DegenerateRatioError):
        dynamic_ratio_from_totals(100, 20, 20)


def test_ledger_not_active():
    with pytest.raises(LedgerNotActive):
        current_ledger()


def _toy_pair(m_steps, T=2):
    task = make_task("toy_map", TaskConfig(B=8, D=4, M_steps=m_steps, T=T))
    args = (task.problem, task.s0, task.batches, task.val_batch)
    reports = {}
    for mode in ("default", "mixflow"):
        cfg = UnrollConfig(T, mode=mode, save_inner_grads=True)
        _, reports[mode] = meta_grad(*args, cfg, with_report=True, check_finite=False)
    return reports


def test_meta_step_conservation_and_timeline():
    reports = _toy_pair(4)
    for report in reports.values():
        assert report.leaked_dynamic_bytes == 0
        assert report.timeline
        assert report.peak_dynamic_bytes == max(b for _, b in report.timeline)
        assert report.timeline[-1][1] == 0
        indices = [i for i, _ in report.timeline]
        assert indices == sorted(indices)
        assert report.static_bytes > 0


def test_op_counts_are_deterministic():
    a, b = _toy_pair(4), _toy_pair(4)
    for mode in a:
        assert a[mode].op_count == b[mode].op_count
        assert a[mode].peak_dynamic_bytes == b[mode].peak_dynamic_bytes
        assert a[mode].static_bytes == b[mode].static_bytes
        assert a[mode].op_kinds == b[mode].op_kinds


def test_toy_map_default_peak_exceeds_mixed():
    reports = _toy_pair(32)
    assert reports["default"].peak_dynamic_bytes > reports["mixflow"].peak_dynamic_bytes


def test_deeper_mlp_has_larger_ratio():
    def ratio(r):
        task = make_task("maml", TaskConfig(B=64, D=2, H=32, R=r, T=2, remat_blocks=True))
        args = (task.problem, task.s0, task.batches, task.val_batch)
        reports = [
            meta_grad(*args, UnrollConfig(2, mode=mode, save_inner_grads=True), with_report=True)[1]
            for mode in ("default", "mixflow")
        ]
        return ratios(*reports).dynamic_ratio

    assert ratio(8) > ratio(2)


def test_timeline_csv(tmp_path):
    _, report = measure(lambda v: grad(lambda z: P.sum(chain(z)))(v), Tensor(np.ones(4)))
    path = tmp_path / "timeline.csv"
    report.write_timeline(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["instruction_index", "live_dynamic_bytes"]
    assert len(rows) == len(report.timeline) + 1
    assert max(int(r[1]) for r in rows[1:]) == report.peak_dynamic_bytes


def test_jvp_keeps_no_residuals_and_bounded_peak():
    x = Tensor(np.ones(100))
    _, plain = measure(chain, x)
    _, forward = measure(lambda v: jvp(chain, (v,), (v,)), x)
    assert forward.residual_count == 0
    assert forward.peak_dynamic_bytes <= 3.5 * plain.peak_dynamic_bytes


def test_nested_measure_restores_outer_ledger():
    def outer(v):
        inner_result, inner_report = measure(chain, v)
        assert current_ledger() is not None
        return inner_report

    inner_report, outer_report = measure(outer, Tensor(np.ones(3)))
    assert inner_report.op_count == 8
