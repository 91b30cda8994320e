"""Deployment plan search, vetting, attention scaling and plot-data emission."""
from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .catalog import AcceleratorSpec, ModelSpec, Workload, lookup
from .costmodel import CostError, attention_cost_usd, ffn_cost_usd, group_intensity, kv_state_bytes, priced
from .moeplan import comm_budget, ffn_net_bytes, s_min
from .pipesim import INDEPENDENT, stage_sums, stage_times_for

AFD = "afd"
COLOCATED = "colocated"
MODES = (AFD, COLOCATED)

MAX_ATTN_INSTANCES = 32
MAX_FFN_INSTANCES = 8

# models shown in the deployment-cost bar comparison
BAR_MODELS = ("step3", "dsv3", "qwen3-moe", "qwen3-32b")


@dataclass(frozen=True)
class PlanFlags:
    sparsity_ok: bool
    net_ok: bool
    stage_ok: bool
    relies_on_large_ep: bool

    def vetted(self, strict_sparsity: bool = False) -> bool:
        return self.net_ok and self.stage_ok and (self.sparsity_ok or not strict_sparsity)


@dataclass(frozen=True)
class DeploymentPlan:
    attn_hw: str
    attn_instances: int
    ffn_hw: str
    ffn_instances: int
    micro_batch: int
    n_micro: int
    total_batch: int
    mode: str
    flags: PlanFlags
    predicted_tgs: float
    theoretical_usd_per_1m: Optional[float]
    gpus_per_instance: int = 8

    @property
    def name(self) -> str:
        return f"{self.attn_instances}A{self.ffn_instances}F"

    @property
    def total_gpus(self) -> int:
        return (self.attn_instances + self.ffn_instances) * self.gpus_per_instance


@dataclass(frozen=True)
class ParetoPoint:
    model: str
    activated_params: float
    best_usd_per_1m: float
    plan: DeploymentPlan
    on_frontier: bool = False


def predicted_tgs(plan: DeploymentPlan, workload: Workload) -> float:
    """Tokens per GPU per second if every step lands exactly on the SLA."""
    return plan.total_batch / (workload.tpot_sla * plan.total_gpus)


def _tgs(total_batch: int, gpus: int, workload: Workload) -> float:
    return total_batch / (workload.tpot_sla * gpus)


def _safe_cost(fn, *args) -> Optional[float]:
    try:
        return fn(*args)
    except CostError:
        return None


def plan_cost(model: ModelSpec, workload: Workload, attn: AcceleratorSpec, ffn: AcceleratorSpec) -> Optional[float]:
    a = _safe_cost(lambda: attention_cost_usd(model, workload, attn)[0])
    f = _safe_cost(ffn_cost_usd, model, ffn, workload)
    return None if a is None or f is None else a + f


def best_afd_quote(model: ModelSpec, workload: Workload,
                   accels: Sequence[AcceleratorSpec]) -> tuple[str, str, float]:
    """Cheapest attention hardware and cheapest FFN hardware, chosen independently."""
    pool = priced(accels)
    if not pool:
        raise CostError("no priced accelerators")
    attn = min(pool, key=lambda a: (attention_cost_usd(model, workload, a)[0], a.name))
    ffn = min(pool, key=lambda a: (ffn_cost_usd(model, a, workload), a.name))
    total = attention_cost_usd(model, workload, attn)[0] + ffn_cost_usd(model, ffn, workload)
    return attn.name, ffn.name, total


def colocated_quote(model: ModelSpec, workload: Workload, accel: AcceleratorSpec) -> float:
    return attention_cost_usd(model, workload, accel)[0] + ffn_cost_usd(model, accel, workload)


def best_colocated_quote(model: ModelSpec, workload: Workload,
                         accels: Sequence[AcceleratorSpec]) -> tuple[str, float]:
    pool = priced(accels)
    if not pool:
        raise CostError("no priced accelerators")
    best = min(pool, key=lambda a: (colocated_quote(model, workload, a), a.name))
    return best.name, colocated_quote(model, workload, best)


def _net_ok(model: ModelSpec, workload: Workload, attn: AcceleratorSpec, ffn: AcceleratorSpec,
            micro_batch: int) -> bool:
    net = min(attn.effective_net_bw, ffn.effective_net_bw)
    L = model.n_layers
    if workload.pipeline_stages == 3:
        # both directions share the single communication stage
        return ffn_net_bytes(model, micro_batch) * L / net <= comm_budget(workload)
    q = model.quant
    worst = max(q.dispatch_bytes, q.combine_bytes) * model.hidden_dim * micro_batch * L / net
    return worst <= comm_budget(workload)


def _sparsity_ok(model: ModelSpec, workload: Workload, ffn: AcceleratorSpec) -> bool:
    # the bound is only defined for three stages; a 4-stage plan is judged by the 3-stage figure
    w = workload if workload.pipeline_stages == 3 else dataclasses.replace(workload, pipeline_stages=3)
    return model.moe_sparsity >= s_min(ffn, model, w)


def _stage_ok(model: ModelSpec, workload: Workload, attn: AcceleratorSpec, n_a: int,
              ffn: AcceleratorSpec, n_f: int, micro_batch: int) -> bool:
    times = stage_times_for(model, workload, attn, n_a, ffn, n_f, micro_batch)
    sums = stage_sums(times, INDEPENDENT)
    budget = workload.tpot_sla / workload.pipeline_stages
    return sums["attention"] <= budget and sums["ffn"] <= budget


def flags_for(model: ModelSpec, workload: Workload, attn: AcceleratorSpec, n_a: int,
              ffn: AcceleratorSpec, n_f: int, micro_batch: int) -> PlanFlags:
    sparsity_ok = _sparsity_ok(model, workload, ffn)
    return PlanFlags(
        sparsity_ok=sparsity_ok,
        net_ok=_net_ok(model, workload, attn, ffn, micro_batch),
        stage_ok=_stage_ok(model, workload, attn, n_a, ffn, n_f, micro_batch),
        relies_on_large_ep=not sparsity_ok,
    )


def make_plan(model: ModelSpec, workload: Workload, accels: Sequence[AcceleratorSpec],
              attn_hw: str, attn_instances: int, ffn_hw: str, ffn_instances: int,
              micro_batch: int, mode: str = AFD) -> DeploymentPlan:
    """Build a plan with every flag, TGS and cost computed from the inputs."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    attn = lookup(accels, attn_hw)
    ffn = lookup(accels, ffn_hw)
    if mode == COLOCATED and attn.name != ffn.name:
        raise ValueError("colocated plans use one accelerator for both tiers")
    if attn.gpus_per_server != ffn.gpus_per_server:
        raise ValueError("attention and FFN servers must hold the same number of GPUs")
    n_micro = workload.pipeline_stages
    total = micro_batch * n_micro
    flags = flags_for(model, workload, attn, attn_instances, ffn, ffn_instances, micro_batch)
    gpus = (attn_instances + ffn_instances) * attn.gpus_per_server
    return DeploymentPlan(
        attn_hw=attn.name, attn_instances=attn_instances, ffn_hw=ffn.name, ffn_instances=ffn_instances,
        micro_batch=micro_batch, n_micro=n_micro, total_batch=total, mode=mode, flags=flags,
        predicted_tgs=_tgs(total, gpus, workload),
        theoretical_usd_per_1m=plan_cost(model, workload, attn, ffn),
        gpus_per_instance=attn.gpus_per_server,
    )


def vet_plan(plan: DeploymentPlan, model: ModelSpec, workload: Workload,
             accels: Sequence[AcceleratorSpec]) -> PlanFlags:
    attn = lookup(accels, plan.attn_hw)
    ffn = lookup(accels, plan.ffn_hw)
    return flags_for(model, workload, attn, plan.attn_instances, ffn, plan.ffn_instances, plan.micro_batch)


def scale_attention(base_plan: DeploymentPlan, base_ctx: float, new_ctx: float,
                    model: Optional[ModelSpec] = None, workload: Optional[Workload] = None,
                    accels: Optional[Sequence[AcceleratorSpec]] = None) -> DeploymentPlan:
    """Grow the attention tier with context, keeping the total batch.

    The TGS is rescaled from the base plan's figure, which may be a measured
    peak rather than a prediction. Flags and cost are carried over unless a
    model, workload and catalog are given, in which case they are recomputed
    at ``new_ctx``.
    """
    if base_ctx <= 0 or new_ctx <= 0:
        raise ValueError("contexts must be positive")
    if new_ctx == base_ctx:
        return base_plan
    n_a = math.ceil(round(base_plan.attn_instances * new_ctx / base_ctx, 9))
    new_gpus = (n_a + base_plan.ffn_instances) * base_plan.gpus_per_instance
    scaled = dataclasses.replace(
        base_plan, attn_instances=n_a,
        predicted_tgs=base_plan.predicted_tgs * base_plan.total_gpus / new_gpus,
    )
    if model is not None and workload is not None and accels is not None:
        w = workload.with_ctx(new_ctx)
        attn, ffn = lookup(accels, scaled.attn_hw), lookup(accels, scaled.ffn_hw)
        scaled = dataclasses.replace(
            scaled,
            flags=vet_plan(scaled, model, w, accels),
            theoretical_usd_per_1m=plan_cost(model, w, attn, ffn),
        )
    return scaled


def micro_batch_candidates(model: ModelSpec, workload: Workload, attn: AcceleratorSpec,
                           ffn: AcceleratorSpec) -> list[int]:
    """Powers of two up to the largest network-feasible micro-batch."""
    out = []
    mb = 1
    while _net_ok(model, workload, attn, ffn, mb):
        out.append(mb)
        mb *= 2
    return out


def _smallest_fit(model, workload, attn, ffn, mb) -> Optional[tuple[int, int]]:
    # stage times scale as 1/instances, so one evaluation at a single instance suffices
    one = stage_sums(stage_times_for(model, workload, attn, 1, ffn, 1, mb), INDEPENDENT)
    budget = workload.tpot_sla / workload.pipeline_stages
    n_a = next((n for n in range(1, MAX_ATTN_INSTANCES + 1) if one["attention"] / n <= budget), None)
    n_f = next((n for n in range(1, MAX_FFN_INSTANCES + 1) if one["ffn"] / n <= budget), None)
    if n_a is None or n_f is None:
        return None
    return n_a, n_f


def candidate_plans(model: ModelSpec, workload: Workload, accels: Sequence[AcceleratorSpec],
                    modes: Sequence[str] = MODES) -> list[DeploymentPlan]:
    """Every priced hardware pairing and power-of-two micro-batch, each at its fewest instances."""
    pool = sorted(priced(accels), key=lambda a: a.name)
    plans = []
    for mode in modes:
        for attn in pool:
            for ffn in pool:
                if mode == COLOCATED and ffn is not attn:
                    continue
                if attn.gpus_per_server != ffn.gpus_per_server:
                    continue
                for mb in micro_batch_candidates(model, workload, attn, ffn):
                    fit = _smallest_fit(model, workload, attn, ffn, mb)
                    if fit is None:
                        continue
                    plans.append(make_plan(model, workload, accels, attn.name, fit[0], ffn.name, fit[1], mb, mode))
    return plans


def _rank(plan: DeploymentPlan) -> tuple:
    return (plan.theoretical_usd_per_1m, -plan.predicted_tgs, plan.mode, plan.attn_hw, plan.ffn_hw, plan.name,
            plan.micro_batch)


def search(model: ModelSpec, workload: Workload, accels: Sequence[AcceleratorSpec],
           strict_sparsity: bool = False, modes: Sequence[str] = MODES) -> list[DeploymentPlan]:
    """Vetted plans, cheapest first, then highest TGS, then by name."""
    plans = [p for p in candidate_plans(model, workload, accels, modes)
             if p.theoretical_usd_per_1m is not None and p.flags.vetted(strict_sparsity)]
    return sorted(plans, key=_rank)


def best_plan(model: ModelSpec, workload: Workload, accels: Sequence[AcceleratorSpec],
              strict_sparsity: bool = False, modes: Sequence[str] = MODES) -> Optional[DeploymentPlan]:
    plans = search(model, workload, accels, strict_sparsity, modes)
    return plans[0] if plans else None


def frontier(points: Sequence[ParetoPoint]) -> list[ParetoPoint]:
    """Mark points no other point beats on both activated params (more) and cost (less)."""
    out = []
    for p in points:
        dominated = any(
            q is not p and q.activated_params >= p.activated_params and q.best_usd_per_1m <= p.best_usd_per_1m
            and (q.activated_params > p.activated_params or q.best_usd_per_1m < p.best_usd_per_1m)
            for q in points
        )
        out.append(dataclasses.replace(p, on_frontier=not dominated))
    return out


def pareto(models: Sequence[ModelSpec], workload: Workload, accels: Sequence[AcceleratorSpec],
           strict_sparsity: bool = False) -> list[ParetoPoint]:
    """Per-model cheapest vetted plan; models without any vetted plan are left out."""
    points = []
    for m in models:
        plan = best_plan(m, workload, accels, strict_sparsity)
        if plan is not None:
            points.append(ParetoPoint(m.name, m.activated_params, plan.theoretical_usd_per_1m, plan))
    points = frontier(points)
    return sorted(points, key=lambda p: (p.activated_params, p.model))


def _csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x: Optional[float], digits: int = 6) -> str:
    return "" if x is None else f"{x:.{digits}g}"


def pareto_csv(models: Sequence[ModelSpec], contexts: Sequence[int], accels: Sequence[AcceleratorSpec],
               strict_sparsity: bool = False, base: Optional[Workload] = None) -> str:
    """Cost vs activated parameters, one row per model and context."""
    base = base or Workload(avg_ctx=8192)
    rows = []
    for ctx in contexts:
        for p in pareto(models, base.with_ctx(ctx), accels, strict_sparsity):
            rows.append([ctx, p.model, _fmt(p.activated_params), f"{p.best_usd_per_1m:.6f}", p.plan.mode,
                         p.plan.attn_hw, p.plan.ffn_hw, p.plan.name, int(p.on_frontier),
                         int(p.plan.flags.relies_on_large_ep)])
    return _csv(["ctx", "model", "activated_params", "usd_per_1m", "mode", "attn_hw", "ffn_hw", "plan",
                 "on_frontier", "relies_on_large_ep"], rows)


def deployment_bars_csv(models: Sequence[ModelSpec], contexts: Sequence[int], accels: Sequence[AcceleratorSpec],
                        base: Optional[Workload] = None) -> str:
    """Colocated cost on each priced accelerator plus the best AFD pairing."""
    base = base or Workload(avg_ctx=8192)
    pool = sorted(priced(accels), key=lambda a: a.name)
    rows = []
    for ctx in contexts:
        w = base.with_ctx(ctx)
        for m in models:
            for a in pool:
                attn, _ = attention_cost_usd(m, w, a)
                ffn = ffn_cost_usd(m, a, w)
                rows.append([ctx, m.name, f"{a.name}", a.name, a.name, f"{attn:.6f}", f"{ffn:.6f}",
                             f"{attn + ffn:.6f}"])
            a_hw, f_hw, total = best_afd_quote(m, w, accels)
            attn, _ = attention_cost_usd(m, w, lookup(accels, a_hw))
            ffn = ffn_cost_usd(m, lookup(accels, f_hw), w)
            rows.append([ctx, m.name, "AFD", a_hw, f_hw, f"{attn:.6f}", f"{ffn:.6f}", f"{total:.6f}"])
    return _csv(["ctx", "model", "config", "attn_hw", "ffn_hw", "attn_usd", "ffn_usd", "total_usd"], rows)


def kv_growth_csv(models: Sequence[ModelSpec], contexts: Sequence[int], accels: Sequence[AcceleratorSpec],
                  base: Optional[Workload] = None) -> str:
    """KV/state bytes per token and best AFD cost as context grows."""
    base = base or Workload(avg_ctx=8192)
    rows = []
    for m in models:
        for ctx in contexts:
            w = base.with_ctx(ctx)
            a_hw, f_hw, total = best_afd_quote(m, w, accels)
            rows.append([m.name, ctx, _fmt(kv_state_bytes(m, w)), f"{total:.6f}", a_hw, f_hw])
    return _csv(["model", "ctx", "kv_state_bytes", "best_afd_usd", "attn_hw", "ffn_hw"], rows)


def intensity_csv(models: Sequence[ModelSpec], accels: Sequence[AcceleratorSpec],
                  base: Optional[Workload] = None) -> str:
    """Attention arithmetic intensity per group alongside accelerator rooflines."""
    base = base or Workload(avg_ctx=8192)
    rows = []
    for m in models:
        for i, g in enumerate(m.attention_groups):
            rows.append(["model", m.name, f"{g.kind}[{i}]", _fmt(group_intensity(g, base))])
    for a in sorted(accels, key=lambda a: a.name):
        for kind in ("eight_bit", "sixteen_bit"):
            if a.has_rate(kind):
                rows.append(["roofline", a.name, kind, _fmt(a.roofline(kind))])
    return _csv(["series", "name", "variant", "flop_per_byte"], rows)
