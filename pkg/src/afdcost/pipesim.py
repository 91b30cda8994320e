"""Discrete-event simulation of the attention / link / FFN decode pipeline.

Every micro-batch walks the layers in order. At each layer it visits the
attention tier, the network, and the FFN tier. Each resource serves one
micro-batch at a time, in order of arrival. A 3-stage layout folds both
transfer directions into a single link visit. A 4-stage layout visits a
forward link before the FFN and a backward link after it.
"""
from __future__ import annotations

import csv
import heapq
import io
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

from .catalog import AcceleratorSpec, AttentionLayerGroup, ModelSpec, Workload, lookup

if TYPE_CHECKING:
    from .planner import DeploymentPlan

INDEPENDENT = "independent"
SHARED = "shared"

ATTENTION = "attention"
FFN = "ffn"
LINK = "link"
LINK_FWD = "link_fwd"
LINK_BWD = "link_bwd"

SIM_STEPS = 3
TRACE_COLUMNS = ("time_s", "resource", "step", "layer", "micro_batch", "stage", "duration_s")


@dataclass(frozen=True)
class StageTimes:
    """Per-layer service time of one micro-batch on each resource, in seconds."""

    t_attn: tuple[float, ...]
    t_comm_fwd: tuple[float, ...]
    t_comm_bwd: tuple[float, ...]
    t_ffn: tuple[float, ...]

    def __post_init__(self):
        n = len(self.t_attn)
        for name in ("t_comm_fwd", "t_comm_bwd", "t_ffn"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name}: expected {n} layers, got {len(getattr(self, name))}")
        for name in ("t_attn", "t_comm_fwd", "t_comm_bwd", "t_ffn"):
            if any(t < 0 or math.isnan(t) for t in getattr(self, name)):
                raise ValueError(f"{name}: stage times must be non-negative")

    @property
    def n_layers(self) -> int:
        return len(self.t_attn)

    def link_time(self, layer: int, links: str = INDEPENDENT) -> float:
        """Link occupancy of one layer in the 3-stage layout."""
        f, b = self.t_comm_fwd[layer], self.t_comm_bwd[layer]
        return max(f, b) if links == INDEPENDENT else f + b

    @classmethod
    def uniform(cls, n_layers: int, attn: float, comm_fwd: float, ffn: float,
                comm_bwd: Optional[float] = None) -> "StageTimes":
        comm_bwd = comm_fwd if comm_bwd is None else comm_bwd
        return cls((attn,) * n_layers, (comm_fwd,) * n_layers, (comm_bwd,) * n_layers, (ffn,) * n_layers)

    def with_attn(self, layer: int, value: float) -> "StageTimes":
        t = list(self.t_attn)
        t[layer] = value
        return StageTimes(tuple(t), self.t_comm_fwd, self.t_comm_bwd, self.t_ffn)


@dataclass(frozen=True)
class TraceEvent:
    time_s: float
    resource: str
    step: int
    layer: int
    micro_batch: int
    stage: str
    duration_s: float


@dataclass(frozen=True)
class SimResult:
    tpot: float
    tgs: float
    sla_tgs: float
    utilization: dict
    bubble_fraction: dict
    event_trace: tuple[TraceEvent, ...]
    n_micro: int
    links: str

    def trace_csv(self) -> str:
        return trace_to_csv(self.event_trace)


def layer_layout(model: ModelSpec) -> list[Optional[AttentionLayerGroup]]:
    """Assign an attention group to every layer, interleaving groups by share.

    Layers not covered by any group carry only linear projections (None).
    """
    groups = list(model.attention_groups)
    total = sum(g.layer_count for g in groups)
    placed = [0] * len(groups)
    layout: list[Optional[AttentionLayerGroup]] = []
    for i in range(total):
        # pick the group furthest behind its proportional share; lowest index wins ties
        target = [(i + 1) * g.layer_count / total - placed[k] for k, g in enumerate(groups)]
        k = max(range(len(groups)), key=lambda j: (target[j], -j))
        placed[k] += 1
        layout.append(groups[k])
    layout.extend([None] * (model.n_layers - total))
    return layout


def stage_times_for(model: ModelSpec, workload: Workload, attn: AcceleratorSpec, attn_instances: int,
                    ffn: AcceleratorSpec, ffn_instances: int, micro_batch: int) -> StageTimes:
    """Per-layer roofline times for one micro-batch spread over the given tiers."""
    ctx = workload.avg_ctx
    mtp = workload.mtp_factor
    q = model.quant
    L = model.n_layers

    a_kind = attn.compute_kind_for(q.compute_kind)
    a_gpus = attn_instances * attn.gpus_per_server
    seqs = micro_batch / a_gpus
    lin_flops = 2.0 * model.attn_linear_params / L
    t_attn = []
    for g in layer_layout(model):
        kv = g.kv_bytes_per_layer(ctx) / workload.kv_quant_factor if g else 0.0
        core = g.core_flops_per_layer(ctx) if g else 0.0
        t_mem = kv * seqs / attn.mem_bw
        t_cmp = (core + lin_flops) * mtp * seqs / attn.flops(a_kind)
        t_attn.append(max(t_mem, t_cmp))

    f_kind = ffn.compute_kind_for(q.compute_kind)
    f_gpus = ffn_instances * ffn.gpus_per_server
    t_w = model.ffn_total_weight_bytes / L / (f_gpus * ffn.mem_bw)
    t_f = 2.0 * model.ffn_activated_params / L * mtp * micro_batch / (f_gpus * ffn.flops(f_kind))
    t_ffn = max(t_w, t_f) if micro_batch > 0 else 0.0

    net = min(attn.effective_net_bw, ffn.effective_net_bw)
    elems = model.hidden_dim * micro_batch * mtp
    fwd = q.dispatch_bytes * elems / net
    bwd = q.combine_bytes * elems / net
    return StageTimes(tuple(t_attn), (fwd,) * L, (bwd,) * L, (t_ffn,) * L)


def derive_stage_times(model: ModelSpec, plan: "DeploymentPlan", workload: Workload,
                       accels: Sequence[AcceleratorSpec]) -> StageTimes:
    try:
        attn = lookup(accels, plan.attn_hw)
        ffn = lookup(accels, plan.ffn_hw)
    except KeyError as e:
        raise ValueError(f"plan references unknown hardware: {e.args[0]}") from None
    return stage_times_for(model, workload, attn, plan.attn_instances, ffn, plan.ffn_instances, plan.micro_batch)


def _pipeline(times: StageTimes, n_micro: int, links: str) -> list[tuple[str, str, tuple[float, ...]]]:
    """(stage name, resource, per-layer durations) in visiting order."""
    L = times.n_layers
    if n_micro == 3:
        link = tuple(times.link_time(l, links) for l in range(L))
        return [(ATTENTION, ATTENTION, times.t_attn), (LINK, LINK, link), (FFN, FFN, times.t_ffn)]
    if n_micro == 4:
        fwd_res, bwd_res = (LINK_FWD, LINK_BWD) if links == INDEPENDENT else (LINK, LINK)
        return [(ATTENTION, ATTENTION, times.t_attn), ("dispatch", fwd_res, times.t_comm_fwd),
                (FFN, FFN, times.t_ffn), ("combine", bwd_res, times.t_comm_bwd)]
    raise ValueError(f"n_micro must be 3 or 4, got {n_micro}")


def run_schedule(times: StageTimes, n_micro: int, links: str = INDEPENDENT,
                 steps: int = SIM_STEPS) -> tuple[list[TraceEvent], dict]:
    """Run the event loop; returns the trace and finish[(step, mb)] times."""
    stages = _pipeline(times, n_micro, links)
    resources = sorted({r for _, r, _ in stages})
    L = times.n_layers
    n_stages = len(stages)

    queues: dict[str, list] = {r: [] for r in resources}
    busy: dict[str, bool] = {r: False for r in resources}
    events: list = []  # (time, seq, resource, task)
    seq = 0
    trace: list[TraceEvent] = []
    finish: dict[tuple[int, int], float] = {}

    for b in range(n_micro):
        heapq.heappush(queues[stages[0][1]], (0.0, 0, 0, b, 0))

    now = 0.0
    while True:
        for r in resources:
            if busy[r] or not queues[r]:
                continue
            _, step, layer, b, k = heapq.heappop(queues[r])
            name, _, durs = stages[k]
            d = durs[layer]
            trace.append(TraceEvent(now, r, step, layer, b, name, d))
            busy[r] = True
            heapq.heappush(events, (now + d, seq, r, (step, layer, b, k)))
            seq += 1
        if not events:
            break
        now = events[0][0]
        while events and events[0][0] == now:
            _, _, r, (step, layer, b, k) = heapq.heappop(events)
            busy[r] = False
            k += 1
            if k == n_stages:
                k, layer = 0, layer + 1
            if layer == L:
                finish[(step, b)] = now
                step, layer = step + 1, 0
                if step == steps:
                    continue
            heapq.heappush(queues[stages[k][1]], (now, step, layer, b, k))
    return trace, finish


def _busy_within(trace: Sequence[TraceEvent], resource: str, lo: float, hi: float) -> float:
    total = 0.0
    for e in trace:
        if e.resource == resource:
            total += max(0.0, min(e.time_s + e.duration_s, hi) - max(e.time_s, lo))
    return total


def simulate(stage_times: StageTimes, plan: "DeploymentPlan", links: str = INDEPENDENT,
             tpot_sla: float = 0.05) -> SimResult:
    """Simulate three token steps and measure the middle one."""
    if stage_times.n_layers == 0:
        raise ValueError("stage times cover no layers")
    n = plan.n_micro
    trace, finish = run_schedule(stage_times, n, links)
    tpot = max(finish[(1, b)] - finish[(0, b)] for b in range(n))
    lo = finish[(0, 0)]
    util, bubble = {}, {}
    for r in sorted({e.resource for e in trace}):
        u = _busy_within(trace, r, lo, lo + tpot) / tpot if tpot > 0 else 1.0
        util[r] = min(1.0, u)
        bubble[r] = 1.0 - util[r]
    gpus = plan.total_gpus
    tgs = plan.total_batch / (tpot * gpus) if tpot > 0 else math.inf
    sla_tgs = plan.total_batch / (max(tpot, tpot_sla) * gpus)
    return SimResult(tpot, tgs, sla_tgs, util, bubble, tuple(trace), n, links)


def analytic_tpot_bound(stage_times: StageTimes, plan: "DeploymentPlan", links: str = INDEPENDENT) -> float:
    """Sum over layers of n_micro times the slowest stage of that layer."""
    n = plan.n_micro
    return sum(
        n * max(stage_times.t_attn[l], stage_times.link_time(l, links), stage_times.t_ffn[l])
        for l in range(stage_times.n_layers)
    )


def resource_tpot_bound(stage_times: StageTimes, n_micro: int, links: str = INDEPENDENT) -> float:
    """Floor on the long-run period of the pipeline.

    Every resource must serve all micro-batches at every layer, and one
    micro-batch must walk its whole chain. The chain part bounds every
    measured step. The load part bounds the period averaged over many steps;
    a single measured step can dip below it while micro-batches drift.
    """
    stages = _pipeline(stage_times, n_micro, links)
    load: dict[str, float] = {}
    for _, r, durs in stages:
        load[r] = load.get(r, 0.0) + n_micro * sum(durs)
    chain = sum(sum(durs) for _, _, durs in stages)
    return max(max(load.values()), chain)


def is_balanced(stage_times: StageTimes, links: str = INDEPENDENT, rel: float = 1e-12) -> bool:
    """All stages of all layers take the same time."""
    vals = []
    for l in range(stage_times.n_layers):
        vals += [stage_times.t_attn[l], stage_times.link_time(l, links), stage_times.t_ffn[l]]
    hi = max(vals)
    return hi - min(vals) <= rel * max(hi, 1e-300)


def stage_sums(stage_times: StageTimes, links: str = INDEPENDENT) -> dict:
    """Per-token time of each stage class summed over layers."""
    L = range(stage_times.n_layers)
    return {
        ATTENTION: sum(stage_times.t_attn),
        LINK: sum(stage_times.link_time(l, links) for l in L),
        FFN: sum(stage_times.t_ffn),
    }


def trace_to_csv(trace: Sequence[TraceEvent]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for e in trace:
        w.writerow([repr(e.time_s), e.resource, e.step, e.layer, e.micro_batch, e.stage, repr(e.duration_s)])
    return buf.getvalue()
