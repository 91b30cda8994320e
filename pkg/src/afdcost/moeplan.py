"""FFN batching and MoE sparsity limits for attention-FFN disaggregated decoding."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .catalog import AcceleratorSpec, ModelSpec, Workload


@dataclass(frozen=True)
class SparsityReport:
    accel: str
    model: str
    b_dense: int
    b_moe: int
    net_bytes_per_layer: float
    s_min: float
    feasible: bool


def b_dense(accel: AcceleratorSpec, compute_kind: str) -> int:
    """Smallest batch B with 2*B >= roofline (8-bit weight storage)."""
    return max(1, math.ceil(accel.roofline(compute_kind) / 2))


def b_moe_exact(accel: AcceleratorSpec, model: ModelSpec) -> float:
    kind = accel.compute_kind_for(model.quant.compute_kind)
    return b_dense(accel, kind) / model.moe_sparsity


def b_moe(accel: AcceleratorSpec, model: ModelSpec) -> int:
    # round before ceil so S=0.08 gives 3700, not 3701 from float noise
    return math.ceil(round(b_moe_exact(accel, model), 9))


def ffn_net_bytes(model: ModelSpec, batch: float) -> float:
    """Dispatch plus combine bytes exchanged per layer for ``batch`` tokens."""
    q = model.quant
    return (q.dispatch_bytes + q.combine_bytes) * model.hidden_dim * batch


def comm_budget(workload: Workload) -> float:
    """Per-token time available to the communication stage, all layers summed."""
    return workload.tpot_sla / workload.pipeline_stages


def sparsity_budget(workload: Workload) -> float:
    # 2/3 comes from the 2*B FLOP/byte ratio meeting the 3*H traffic term
    return comm_budget(workload) * 2.0 / 3.0


def s_min(accel: AcceleratorSpec, model: ModelSpec, workload: Optional[Workload] = None) -> float:
    workload = workload or Workload(avg_ctx=8192)
    if workload.pipeline_stages != 3:
        raise ValueError("minimum sparsity is only defined for the 3-stage pipeline")
    kind = accel.compute_kind_for(model.quant.compute_kind)
    num = model.hidden_dim * accel.flops(kind) * model.n_layers
    den = accel.effective_net_bw * accel.mem_bw * sparsity_budget(workload)
    return min(1.0, num / den)


def min_sparsity(accel: AcceleratorSpec, model: ModelSpec, workload: Optional[Workload] = None) -> SparsityReport:
    workload = workload or Workload(avg_ctx=8192)
    s = s_min(accel, model, workload)
    kind = accel.compute_kind_for(model.quant.compute_kind)
    bm = b_moe(accel, model)
    return SparsityReport(
        accel=accel.name,
        model=model.name,
        b_dense=b_dense(accel, kind),
        b_moe=bm,
        net_bytes_per_layer=ffn_net_bytes(model, bm),
        s_min=s,
        feasible=model.moe_sparsity >= s,
    )


def max_micro_batch(model: ModelSpec, accel: AcceleratorSpec, workload: Workload) -> int:
    """Largest micro-batch whose per-token FFN traffic over all layers fits the comm budget."""
    per_token = ffn_net_bytes(model, 1) * model.n_layers / accel.effective_net_bw
    return math.floor(comm_budget(workload) / per_token)


def activated_experts_needed(s: float, n_experts: int, n_shared: int = 1) -> float:
    """Activated routed experts needed to reach sparsity ``s`` (shared experts counted in S)."""
    return (n_experts + n_shared) * s - n_shared
