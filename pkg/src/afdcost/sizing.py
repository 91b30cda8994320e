"""Feasibility of weak accelerators under a per-layer latency budget."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .catalog import AcceleratorSpec, ModelSpec, Workload

# Step-3 linear weights read per L20 device per layer: o_proj at TP=8, rest replicated
DEFAULT_LINEAR_BYTES = 67e6
DEFAULT_BW_FRACTION = 0.5

LINEAR_TOO_LARGE = "linear weights exceed per-layer byte budget"


@dataclass(frozen=True)
class SizingReport:
    """Attention-side and/or FFN-side sizing; fields of the side not evaluated are None."""

    accel: str
    model: str
    stage_budget: float
    attn_bytes_budget: Optional[float] = None
    linear_weight_bytes: Optional[float] = None
    kv_budget: Optional[float] = None
    max_ctx_tokens: Optional[int] = None
    ffn_bytes_per_device: Optional[float] = None
    servers_needed: Optional[int] = None
    cards_needed: Optional[int] = None
    feasible: bool = True
    reason: str = ""

    def requests_at(self, ctx: int) -> int:
        """How many requests of ``ctx`` tokens fit in the KV budget at once."""
        if not self.max_ctx_tokens or ctx <= 0:
            return 0
        return self.max_ctx_tokens // ctx


def stage_budget(workload: Workload, model: ModelSpec) -> float:
    """Seconds available to one layer of one stage."""
    return workload.tpot_sla / workload.pipeline_stages / model.n_layers


def kv_bytes_per_layer_token(model: ModelSpec, workload: Optional[Workload] = None) -> float:
    """KV bytes appended per token, averaged over all layers."""
    total = sum(g.layer_count * g.kv_token_bytes for g in model.attention_groups)
    factor = workload.kv_quant_factor if workload is not None else 1.0
    return total / model.n_layers / factor


def attention_capacity(accel: AcceleratorSpec, model: ModelSpec, workload: Workload,
                       linear_weight_bytes: float = DEFAULT_LINEAR_BYTES) -> SizingReport:
    budget = stage_budget(workload, model)
    bytes_budget = accel.mem_bw * budget
    kv_budget = bytes_budget - linear_weight_bytes
    if kv_budget <= 0:
        return SizingReport(accel.name, model.name, budget, bytes_budget, linear_weight_bytes,
                            kv_budget, 0, feasible=False, reason=LINEAR_TOO_LARGE)
    per_token = kv_bytes_per_layer_token(model, workload)
    max_ctx = math.floor(kv_budget / per_token) if per_token > 0 else None
    return SizingReport(accel.name, model.name, budget, bytes_budget, linear_weight_bytes, kv_budget, max_ctx)


def ffn_servers_needed(accel: AcceleratorSpec, model: ModelSpec, workload: Workload,
                       bw_fraction: float = DEFAULT_BW_FRACTION) -> SizingReport:
    if not 0 < bw_fraction <= 1:
        raise ValueError(f"bw_fraction must be in (0, 1], got {bw_fraction}")
    budget = stage_budget(workload, model)
    # weights one device can stream across all layers within the FFN stage
    per_device = accel.mem_bw * bw_fraction * budget * model.n_layers
    per_server = per_device * accel.gpus_per_server
    servers = max(1, math.ceil(round(model.ffn_total_weight_bytes / per_server, 9)))
    return SizingReport(accel.name, model.name, budget, ffn_bytes_per_device=per_device,
                        servers_needed=servers, cards_needed=servers * accel.gpus_per_server)


def size(accel: AcceleratorSpec, model: ModelSpec, workload: Workload,
         linear_weight_bytes: float = DEFAULT_LINEAR_BYTES,
         bw_fraction: float = DEFAULT_BW_FRACTION) -> SizingReport:
    """Both sides combined into one report."""
    a = attention_capacity(accel, model, workload, linear_weight_bytes)
    f = ffn_servers_needed(accel, model, workload, bw_fraction)
    return SizingReport(
        accel.name, model.name, a.stage_budget, a.attn_bytes_budget, a.linear_weight_bytes,
        a.kv_budget, a.max_ctx_tokens, f.ffn_bytes_per_device, f.servers_needed, f.cards_needed,
        feasible=a.feasible, reason=a.reason,
    )
