"""Per-token FLOPs/bytes accounting and theoretical USD decoding cost.

Quantities are per decode step of one sequence. With ``mtp_factor == 1`` a
step emits exactly one token; with MTP the step scores ``mtp_factor`` tokens
and costs are divided by ``Workload.tokens_per_step``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

from .catalog import FULL, AcceleratorSpec, AttentionLayerGroup, ModelSpec, Workload

COMPUTE_BOUND = "compute_bound"
MEMORY_BOUND = "memory_bound"

SECONDS_PER_HOUR = 3600.0
PER_MILLION = 1e6


class CostError(ValueError):
    pass


@dataclass(frozen=True)
class CostBreakdown:
    kv_state_bytes: float
    attn_core_flops: float
    attn_linear_flops: float
    ffn_flops: float


@dataclass(frozen=True)
class UnitCosts:
    u_flop: float
    u_byte: float


@dataclass(frozen=True)
class CostQuote:
    model: str
    accel: str
    attn_usd_per_1m: float
    ffn_usd_per_1m: float
    binding_constraint: str

    @property
    def total_usd_per_1m(self) -> float:
        return self.attn_usd_per_1m + self.ffn_usd_per_1m


def kv_state_bytes(model: ModelSpec, workload: Workload) -> float:
    total = sum(g.layer_count * g.kv_bytes_per_layer(workload.avg_ctx) for g in model.attention_groups)
    return total / workload.kv_quant_factor


def attn_core_flops(model: ModelSpec, workload: Workload) -> float:
    total = sum(g.layer_count * g.core_flops_per_layer(workload.avg_ctx) for g in model.attention_groups)
    return total * workload.mtp_factor


def attn_linear_flops(model: ModelSpec, workload: Optional[Workload] = None) -> float:
    mtp = workload.mtp_factor if workload is not None else 1.0
    return 2.0 * model.attn_linear_params * mtp


def ffn_flops(model: ModelSpec, workload: Optional[Workload] = None) -> float:
    mtp = workload.mtp_factor if workload is not None else 1.0
    return 2.0 * model.ffn_activated_params * mtp


def breakdown(model: ModelSpec, workload: Workload) -> CostBreakdown:
    return CostBreakdown(
        kv_state_bytes=kv_state_bytes(model, workload),
        attn_core_flops=attn_core_flops(model, workload),
        attn_linear_flops=attn_linear_flops(model, workload),
        ffn_flops=ffn_flops(model, workload),
    )


def group_intensity(group: AttentionLayerGroup, workload: Workload) -> float:
    ctx = max(workload.avg_ctx, 1)
    flops = group.core_flops_per_layer(ctx) * workload.mtp_factor
    return flops / (group.kv_bytes_per_layer(ctx) / workload.kv_quant_factor)


def arithmetic_intensity(model: ModelSpec, workload: Optional[Workload] = None) -> Union[float, list[tuple[str, float]]]:
    """FLOPs per KV byte of the attention core.

    A scalar for models whose groups are all full attention; otherwise a list
    of ``(kind, intensity)`` per group, evaluated at ``workload.avg_ctx``.
    """
    workload = workload or Workload(avg_ctx=8192)
    if model.kinds() == {FULL}:
        w = workload if workload.avg_ctx >= 1 else workload.with_ctx(1)
        return attn_core_flops(model, w) / kv_state_bytes(model, w)
    return [(g.kind, group_intensity(g, workload)) for g in model.attention_groups]


def unit_costs(accel: AcceleratorSpec, compute_kind: str) -> UnitCosts:
    if accel.price_usd_per_hour is None:
        raise CostError(f"{accel.name}: no price, sizing-only accelerator")
    try:
        flops = accel.flops(compute_kind)
    except ValueError as e:
        raise CostError(str(e)) from None
    price = accel.price_usd_per_hour
    return UnitCosts(u_flop=price / (flops * SECONDS_PER_HOUR), u_byte=price / (accel.mem_bw * SECONDS_PER_HOUR))


def _units_for(model: ModelSpec, accel: AcceleratorSpec) -> UnitCosts:
    # without a native 8-bit rate compute runs at 16-bit; stored bytes are unchanged
    return unit_costs(accel, accel.compute_kind_for(model.quant.compute_kind))


def attention_cost_usd(model: ModelSpec, workload: Workload, accel: AcceleratorSpec) -> tuple[float, str]:
    """USD per 1M tokens for attention and which roofline arm bound the core."""
    u = _units_for(model, accel)
    compute = attn_core_flops(model, workload) * u.u_flop
    memory = kv_state_bytes(model, workload) * u.u_byte
    binding = COMPUTE_BOUND if compute > memory else MEMORY_BOUND
    per_step = max(compute, memory) + attn_linear_flops(model, workload) * u.u_flop
    return per_step / workload.tokens_per_step * PER_MILLION, binding


def ffn_cost_usd(model: ModelSpec, accel: AcceleratorSpec, workload: Optional[Workload] = None) -> float:
    u = _units_for(model, accel)
    per_step = ffn_flops(model, workload) * u.u_flop
    tokens = workload.tokens_per_step if workload is not None else 1.0
    return per_step / tokens * PER_MILLION


def quote(model: ModelSpec, workload: Workload, accel: AcceleratorSpec) -> CostQuote:
    attn, binding = attention_cost_usd(model, workload, accel)
    return CostQuote(model.name, accel.name, attn, ffn_cost_usd(model, accel, workload), binding)


def cost_table(models: Sequence[ModelSpec], accels: Sequence[AcceleratorSpec],
               workload: Workload) -> list[list[Union[CostQuote, CostError]]]:
    """Cartesian model x accelerator evaluation; failing cells hold the error."""
    rows = []
    for m in models:
        row: list[Union[CostQuote, CostError]] = []
        for a in accels:
            try:
                row.append(quote(m, workload, a))
            except CostError as e:
                row.append(e)
        rows.append(row)
    return rows


def priced(accels: Sequence[AcceleratorSpec]) -> list[AcceleratorSpec]:
    return [a for a in accels if a.priced]
