import csv
import dataclasses
import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afdcost.catalog import FULL, LINEAR_STATE, Workload
from afdcost.pipesim import (
    INDEPENDENT,
    SHARED,
    TRACE_COLUMNS,
    StageTimes,
    _pipeline,
    analytic_tpot_bound,
    derive_stage_times,
    is_balanced,
    layer_layout,
    resource_tpot_bound,
    run_schedule,
    simulate,
    stage_sums,
    stage_times_for,
)
from afdcost.planner import make_plan, predicted_tgs, scale_attention
from conftest import toy_plan

MS = 1e-3


def reference_schedule(times: StageTimes, n_micro: int, links: str, steps: int = 3):
    """Straightforward list scheduler used as an independent oracle.

    Repeatedly starts whichever waiting task can start earliest anywhere;
    each resource takes the earliest-arrived task (then step, layer, mb).
    """
    L = times.n_layers
    if n_micro == 3:
        link = [max(f, b) if links == INDEPENDENT else f + b for f, b in zip(times.t_comm_fwd, times.t_comm_bwd)]
        stages = [("attention", times.t_attn), ("link", link), ("ffn", times.t_ffn)]
    else:
        fwd, bwd = ("link_fwd", "link_bwd") if links == INDEPENDENT else ("link", "link")
        stages = [("attention", times.t_attn), (fwd, times.t_comm_fwd), ("ffn", times.t_ffn), (bwd, times.t_comm_bwd)]
    free = {r: 0.0 for r, _ in stages}
    # per micro-batch: (ready time, step, layer, stage index)
    pending = {b: (0.0, 0, 0, 0) for b in range(n_micro)}
    starts = []
    finish = {}
    while pending:
        best = None
        for r in sorted(free):
            waiting = [(ready, step, layer, b, k) for b, (ready, step, layer, k) in pending.items() if stages[k][0] == r]
            if not waiting:
                continue
            arrived = [w for w in waiting if w[0] <= free[r]]
            pick = min(arrived) if arrived else min(waiting)
            start = max(free[r], pick[0])
            if best is None or (start, r) < (best[0], best[1]):
                best = (start, r, pick)
        start, r, (ready, step, layer, b, k) = best
        d = stages[k][1][layer]
        free[r] = start + d
        starts.append((r, step, layer, b, k, start))
        k += 1
        if k == len(stages):
            k, layer = 0, layer + 1
        if layer == L:
            finish[(step, b)] = start + d
            step, layer = step + 1, 0
        if step == steps:
            del pending[b]
        else:
            pending[b] = (start + d, step, layer, k)
    return starts, finish


def test_balanced_toy():
    t = StageTimes.uniform(2, MS, MS, MS)
    r = simulate(t, toy_plan())
    assert r.tpot == pytest.approx(6 * MS)
    assert all(u == pytest.approx(1.0) for u in r.utilization.values())
    assert all(b == pytest.approx(0.0, abs=1e-12) for b in r.bubble_fraction.values())
    assert analytic_tpot_bound(t, toy_plan()) == pytest.approx(r.tpot)


def test_all_zero_times():
    t = StageTimes.uniform(3, 0.0, 0.0, 0.0)
    assert analytic_tpot_bound(t, toy_plan()) == 0
    assert simulate(t, toy_plan()).tpot == 0


def test_layer_max_sum_is_not_a_floor_for_skewed_layers():
    # heavy attention in layer 0 and heavy FFN in layer 1 overlap across micro-batches
    t = StageTimes((3.0, 0.0), (0.0, 0.0), (0.0, 0.0), (0.0, 3.0))
    plan = toy_plan()
    assert analytic_tpot_bound(t, plan) == pytest.approx(18.0)
    assert simulate(t, plan).tpot == pytest.approx(12.0)
    # the pipeline is periodic from the first step and never approaches 18
    _, finish = run_schedule(t, 3, steps=12)
    assert finish[(11, 0)] - finish[(10, 0)] == pytest.approx(12.0)
    assert resource_tpot_bound(t, 3) == pytest.approx(9.0)


def test_hot_attention_layer_creates_bubbles():
    base = StageTimes.uniform(4, MS, MS, MS)
    hot = base.with_attn(2, 10 * MS)
    plan = toy_plan()
    r = simulate(hot, plan)
    assert r.tpot > analytic_tpot_bound(base, plan)
    assert r.bubble_fraction["ffn"] > 0


def test_balanced_61_layers_meets_sla():
    t_stage = 0.05 / 3 / 61
    t = StageTimes.uniform(61, t_stage, t_stage, t_stage)
    plan = toy_plan(micro_batch=2048, attn=2, ffn=2, gpus=8)
    r = simulate(t, plan)
    assert r.tpot <= 0.05 * (1 + 1e-9)
    assert r.tgs == pytest.approx(predicted_tgs(plan, Workload(avg_ctx=4096)), rel=0.01)


def test_conservation_and_columns():
    t = StageTimes((1.0, 2.0), (0.5, 0.5), (0.3, 0.2), (1.0, 1.5))
    for n in (3, 4):
        r = simulate(t, toy_plan(n_micro=n))
        keys = [(e.step, e.layer, e.micro_batch, e.stage) for e in r.event_trace]
        assert len(keys) == len(set(keys))
        per_step = {}
        for s, l, b, stage in keys:
            per_step.setdefault(s, set()).add((l, b, stage))
        assert all(len(v) == 2 * n * n for v in per_step.values())
        rows = list(csv.reader(io.StringIO(r.trace_csv())))
        assert tuple(rows[0]) == TRACE_COLUMNS
        assert len(rows) == len(r.event_trace) + 1


def test_trace_time_ordered():
    t = StageTimes((1.0, 2.0, 0.1), (0.5, 0.5, 0.5), (0.3, 0.2, 0.1), (1.0, 1.5, 2.0))
    r = simulate(t, toy_plan())
    times = [e.time_s for e in r.event_trace]
    assert times == sorted(times)


def test_determinism():
    t = StageTimes((1.0, 2.0, 0.7), (0.5, 0.1, 0.5), (0.3, 0.2, 0.9), (1.0, 1.5, 0.2))
    a = simulate(t, toy_plan()).trace_csv()
    b = simulate(t, toy_plan()).trace_csv()
    assert a == b


def test_bad_n_micro():
    with pytest.raises(ValueError):
        simulate(StageTimes.uniform(1, 1, 1, 1), toy_plan(n_micro=5))


def test_stage_times_validation():
    with pytest.raises(ValueError):
        StageTimes((1.0,), (1.0, 1.0), (1.0,), (1.0,))
    with pytest.raises(ValueError):
        StageTimes((-1.0,), (1.0,), (1.0,), (1.0,))


durations = st.floats(0.0, 10.0, allow_nan=False)


@st.composite
def instances(draw, positive=False):
    L = draw(st.integers(1, 4))
    lo = 0.01 if positive else 0.0
    d = st.floats(lo, 10.0, allow_nan=False)
    vec = lambda: tuple(draw(st.lists(d, min_size=L, max_size=L)))  # noqa: E731
    return StageTimes(vec(), vec(), vec(), vec())


@settings(max_examples=150, deadline=None)
@given(t=instances(positive=True), n=st.sampled_from([3, 4]), links=st.sampled_from([INDEPENDENT, SHARED]))
def test_matches_reference_scheduler(t, n, links):
    trace, finish = run_schedule(t, n, links)
    starts, ref_finish = reference_schedule(t, n, links)
    assert len(trace) == len(starts)
    got = sorted((e.resource, e.step, e.layer, e.micro_batch) + (round(e.time_s, 9),) for e in trace)
    want = sorted((r, s, l, b, round(start, 9)) for r, s, l, b, _, start in starts)
    assert got == want
    for k, v in finish.items():
        assert v == pytest.approx(ref_finish[k], abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(t=instances(), n=st.sampled_from([3, 4]), links=st.sampled_from([INDEPENDENT, SHARED]))
def test_true_lower_bounds(t, n, links):
    _, finish = run_schedule(t, n, links, steps=3)
    r = simulate(t, toy_plan(n_micro=n), links)
    # every micro-batch walks its whole chain each step
    chain = sum(t.t_attn) + sum(t.t_ffn) + (
        sum(t.link_time(l, links) for l in range(t.n_layers)) if n == 3 else sum(t.t_comm_fwd) + sum(t.t_comm_bwd))
    assert r.tpot >= chain * (1 - 1e-9)
    # steps 1 and 2 of every micro-batch all run after the first finish of step 0
    span = max(finish[(2, b)] for b in range(n)) - min(finish[(0, b)] for b in range(n))
    loads = {}
    for name, res, durs in _stages(t, n, links):
        loads[res] = loads.get(res, 0.0) + n * sum(durs)
    assert span >= 2 * max(loads.values()) * (1 - 1e-9) - 1e-12


def _stages(t, n, links):
    return _pipeline(t, n, links)


@settings(max_examples=200, deadline=None)
@given(t=instances(), n=st.sampled_from([3, 4]))
def test_independent_links_never_slower(t, n):
    _, fi = run_schedule(t, n, INDEPENDENT)
    _, fs = run_schedule(t, n, SHARED)
    assert max(fi.values()) <= max(fs.values()) * (1 + 1e-9) + 1e-12


@settings(max_examples=100, deadline=None)
@given(L=st.integers(1, 6), d=st.floats(1e-4, 1.0))
def test_balanced_bound_is_tight(L, d):
    t = StageTimes.uniform(L, d, d, d)
    assert is_balanced(t)
    assert simulate(t, toy_plan()).tpot == pytest.approx(analytic_tpot_bound(t, toy_plan()), rel=1e-9)


# ---- stage times from the catalog

def test_step3_2a2f_stage_sums_fit(models, accel_list):
    w = Workload(avg_ctx=4096)
    plan = make_plan(models["step3"], w, accel_list, "H800", 2, "H800", 2, 2048)
    sums = stage_sums(derive_stage_times(models["step3"], plan, w, accel_list))
    assert all(v <= 0.05 / 3 for v in sums.values())


def test_step3_attention_time_by_hand(models, accels):
    # per-token figures at 8K scaled to 4K, 128 sequences per H800 GPU
    w = Workload(avg_ctx=4096)
    t = stage_times_for(models["step3"], w, accels["H800"], 2, accels["H800"], 2, 2048)
    kv = 2.56e8 / 2 / 61
    flops = (3.27e10 / 2 + 2.07e10) / 61
    expected = max(kv * 128 / 3.35e12, flops * 128 / 1.98e15)
    assert t.t_attn[0] == pytest.approx(expected, rel=0.02)
    ffn_w = 3.04e11 / 61 / (16 * 3.35e12)
    ffn_c = 5.33e10 / 61 * 2048 / (16 * 1.98e15)
    assert t.t_ffn[0] == pytest.approx(max(ffn_w, ffn_c), rel=0.02)
    assert t.t_comm_fwd[0] == pytest.approx(7168 * 2048 / 4e11)
    assert t.t_comm_bwd[0] == pytest.approx(2 * 7168 * 2048 / 4e11)


def test_zero_micro_batch(models, accels):
    t = stage_times_for(models["step3"], Workload(avg_ctx=4096), accels["H800"], 2, accels["H800"], 2, 0)
    assert sum(t.t_attn) == sum(t.t_ffn) == sum(t.t_comm_fwd) == sum(t.t_comm_bwd) == 0


def test_minimax_full_layers_dominate(models, accels):
    m = models["minimax-m1"]
    t = stage_times_for(m, Workload(avg_ctx=32768), accels["H800"], 2, accels["H800"], 2, 2048)
    layout = layer_layout(m)
    full = [x for x, g in zip(t.t_attn, layout) if g.kind == FULL]
    lin = [x for x, g in zip(t.t_attn, layout) if g.kind == LINEAR_STATE]
    assert min(full) > 10 * max(lin)


def test_layer_layout_interleaves(models):
    layout = layer_layout(models["minimax-m1"])
    assert len(layout) == 80
    full_at = [i for i, g in enumerate(layout) if g.kind == FULL]
    assert len(full_at) == 10
    gaps = {b - a for a, b in zip(full_at, full_at[1:])}
    assert gaps == {8}


def test_hybrid_imbalance_bubbles(models, accels):
    m = models["minimax-m1"]
    w = Workload(avg_ctx=32768)
    t = stage_times_for(m, w, accels["H20"], 4, accels["H800"], 1, 1024)
    r = simulate(t, toy_plan(micro_batch=1024, attn=4, ffn=1, gpus=8))
    assert r.bubble_fraction["ffn"] > 0


def test_unknown_hardware(models, accel_list):
    w = Workload(avg_ctx=4096)
    plan = make_plan(models["step3"], w, accel_list, "H800", 2, "H800", 2, 2048)
    with pytest.raises(ValueError, match="unknown hardware"):
        derive_stage_times(models["step3"], dataclasses.replace(plan, attn_hw="B200"), w, accel_list)


def test_scaling_attention_keeps_tpot(models, accel_list):
    m = models["step3"]
    w4 = Workload(avg_ctx=4096)
    base = make_plan(m, w4, accel_list, "H800", 2, "H800", 2, 2048)
    scaled = scale_attention(base, 4096, 8192, m, w4, accel_list)
    w8 = w4.with_ctx(8192)
    r0 = simulate(derive_stage_times(m, base, w4, accel_list), base)
    r1 = simulate(derive_stage_times(m, scaled, w8, accel_list), scaled)
    assert r1.tpot == pytest.approx(r0.tpot, rel=0.01)
    assert r1.tgs / r0.tgs == pytest.approx(base.total_gpus / scaled.total_gpus, rel=0.01)


def test_four_stage_layout_runs(models, accel_list):
    w = Workload(avg_ctx=4096, pipeline_stages=4)
    plan = make_plan(models["step3"], w, accel_list, "H800", 2, "H800", 2, 2048)
    t = derive_stage_times(models["step3"], plan, w, accel_list)
    ri = simulate(t, plan, INDEPENDENT)
    rs = simulate(t, plan, SHARED)
    assert {"link_fwd", "link_bwd"} <= set(ri.utilization)
    assert "link" in rs.utilization
    assert ri.tpot <= 0.05


def test_sla_tgs_is_floor(models, accel_list):
    w = Workload(avg_ctx=4096)
    plan = make_plan(models["step3"], w, accel_list, "H800", 2, "H800", 2, 2048)
    r = simulate(derive_stage_times(models["step3"], plan, w, accel_list), plan)
    assert r.tpot <= 0.05
    assert r.sla_tgs == pytest.approx(3840)
    assert r.tgs >= r.sla_tgs
