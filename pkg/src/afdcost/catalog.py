"""Domain types for models, accelerators and workloads, plus TOML catalog I/O.

All types are frozen dataclasses validated on construction, so an instance
that exists is an instance that satisfies its invariants.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence, TypeVar, Union

import tomli
import tomli_w

EIGHT_BIT = "eight_bit"
SIXTEEN_BIT = "sixteen_bit"
COMPUTE_KINDS = (EIGHT_BIT, SIXTEEN_BIT)

FULL = "full"
WINDOWED = "windowed"
LINEAR_STATE = "linear_state"
ATTENTION_KINDS = (FULL, WINDOWED, LINEAR_STATE)

_BYTE_WIDTHS = (1, 2, 4)


class CatalogError(ValueError):
    """Raised for malformed catalog files and invariant violations."""


def _require(cond: bool, where: str, msg: str) -> None:
    if not cond:
        raise CatalogError(f"{where}: {msg}")


@dataclass(frozen=True)
class QuantScheme:
    kv_store_bytes: int = 1
    weight_bytes: int = 1
    dispatch_bytes: int = 1
    combine_bytes: int = 2
    compute_kind: str = EIGHT_BIT

    def __post_init__(self):
        for f in ("kv_store_bytes", "weight_bytes", "dispatch_bytes", "combine_bytes"):
            v = getattr(self, f)
            _require(v in _BYTE_WIDTHS, f, f"must be one of {_BYTE_WIDTHS}, got {v!r}")
        _require(self.compute_kind in COMPUTE_KINDS, "compute_kind",
                 f"must be one of {COMPUTE_KINDS}, got {self.compute_kind!r}")


@dataclass(frozen=True)
class AttentionLayerGroup:
    """A run of identical attention layers.

    ``qk_dim``/``v_dim`` are the per-head widths that enter the QK and PV
    products; for absorbed latent attention both are the compressed width.
    """

    kind: str
    layer_count: int
    n_q_heads: int = 0
    qk_dim: int = 0
    v_dim: int = 0
    kv_token_bytes: int = 0
    const_state_bytes: int = 0
    const_flops_per_token: int = 0
    window_len: Optional[int] = None

    def __post_init__(self):
        _require(self.kind in ATTENTION_KINDS, "kind",
                 f"unknown attention kind {self.kind!r} (expected one of {ATTENTION_KINDS})")
        _require(self.layer_count >= 1, "layer_count", f"must be >= 1, got {self.layer_count}")
        for f in ("n_q_heads", "qk_dim", "v_dim", "kv_token_bytes",
                  "const_state_bytes", "const_flops_per_token"):
            _require(getattr(self, f) >= 0, f, "must be >= 0")
        if self.kind == LINEAR_STATE:
            _require(self.kv_token_bytes == 0, "kv_token_bytes", "must be 0 for linear_state")
            _require(self.const_state_bytes > 0, "const_state_bytes", "must be > 0 for linear_state")
        else:
            _require(self.const_state_bytes == 0, "const_state_bytes",
                     f"must be 0 for {self.kind} attention")
            _require(self.kv_token_bytes > 0, "kv_token_bytes", f"must be > 0 for {self.kind} attention")
        if self.kind == WINDOWED:
            _require(self.window_len is not None and self.window_len > 0, "window_len",
                     "windowed attention needs window_len > 0")
        else:
            _require(self.window_len is None, "window_len", f"not allowed for {self.kind} attention")

    def effective_ctx(self, ctx: float) -> float:
        if self.kind == WINDOWED:
            return min(ctx, self.window_len)
        if self.kind == LINEAR_STATE:
            return 0
        return ctx

    def kv_bytes_per_layer(self, ctx: float) -> float:
        """KV/state bytes read by one layer of this group for one decoded token."""
        if self.kind == LINEAR_STATE:
            return self.const_state_bytes
        return self.kv_token_bytes * self.effective_ctx(ctx)

    def core_flops_per_layer(self, ctx: float) -> float:
        if self.kind == LINEAR_STATE:
            return self.const_flops_per_token
        return 2 * self.n_q_heads * (self.qk_dim + self.v_dim) * self.effective_ctx(ctx)


@dataclass(frozen=True)
class ModelSpec:
    name: str
    total_params: int
    activated_params: int
    n_layers: int
    hidden_dim: int
    attention_groups: tuple[AttentionLayerGroup, ...]
    attn_linear_params: int
    ffn_activated_params: int
    ffn_total_weight_bytes: int
    moe_sparsity: float
    quant: QuantScheme = field(default_factory=QuantScheme)
    effective_rank: int = 0
    label: str = ""

    def __post_init__(self):
        if not isinstance(self.attention_groups, tuple):
            object.__setattr__(self, "attention_groups", tuple(self.attention_groups))
        _require(bool(self.name), "name", "must be non-empty")
        _require(self.n_layers >= 1, "n_layers", "must be >= 1")
        _require(self.hidden_dim >= 1, "hidden_dim", "must be >= 1")
        used = sum(g.layer_count for g in self.attention_groups)
        _require(used <= self.n_layers, "attention_groups",
                 f"layer counts sum to {used} > n_layers={self.n_layers}")
        _require(0 < self.moe_sparsity <= 1, "moe_sparsity",
                 f"must be in (0, 1], got {self.moe_sparsity}")
        _require(0 <= self.activated_params <= self.total_params, "activated_params",
                 "must satisfy 0 <= activated_params <= total_params")
        for f in ("attn_linear_params", "ffn_activated_params", "ffn_total_weight_bytes"):
            _require(getattr(self, f) >= 0, f, "must be >= 0")
        _require(self.ffn_total_weight_bytes >= self.ffn_activated_params * self.quant.weight_bytes,
                 "ffn_total_weight_bytes", "smaller than activated FFN weights")

    @property
    def display(self) -> str:
        return self.label or self.name

    def kinds(self) -> set[str]:
        return {g.kind for g in self.attention_groups}


@dataclass(frozen=True)
class AcceleratorSpec:
    name: str
    flops_16bit: float
    mem_bw: float
    net_bw_per_server: float
    price_usd_per_hour: Optional[float] = None
    flops_8bit: Optional[float] = None
    gpus_per_server: int = 8
    net_efficiency: float = 1.0
    label: str = ""

    def __post_init__(self):
        _require(bool(self.name), "name", "must be non-empty")
        _require(self.price_usd_per_hour is None or self.price_usd_per_hour > 0,
                 "price_usd_per_hour", "must be > 0 when given")
        _require(self.flops_16bit > 0, "flops_16bit", "must be > 0")
        _require(self.flops_8bit is None or self.flops_8bit > 0, "flops_8bit", "must be > 0 when given")
        _require(self.mem_bw > 0 and math.isfinite(self.mem_bw), "mem_bw", "must be finite and > 0")
        _require(self.net_bw_per_server > 0, "net_bw_per_server", "must be > 0")
        _require(self.gpus_per_server >= 1, "gpus_per_server", "must be >= 1")
        _require(0 < self.net_efficiency <= 1, "net_efficiency", "must be in (0, 1]")

    @property
    def priced(self) -> bool:
        return self.price_usd_per_hour is not None

    def has_rate(self, kind: str) -> bool:
        return kind == SIXTEEN_BIT or (kind == EIGHT_BIT and self.flops_8bit is not None)

    def flops(self, kind: str) -> float:
        if kind not in COMPUTE_KINDS:
            raise ValueError(f"unknown compute kind {kind!r}")
        if kind == EIGHT_BIT:
            if self.flops_8bit is None:
                raise ValueError(f"{self.name}: no native 8-bit rate")
            return self.flops_8bit
        return self.flops_16bit

    def compute_kind_for(self, wanted: str) -> str:
        """Best supported compute kind: 8-bit falls back to 16-bit when absent."""
        return wanted if self.has_rate(wanted) else SIXTEEN_BIT

    def roofline(self, kind: str) -> float:
        return self.flops(kind) / self.mem_bw

    @property
    def effective_net_bw(self) -> float:
        return self.net_bw_per_server * self.net_efficiency


@dataclass(frozen=True)
class Workload:
    avg_ctx: float
    tpot_sla: float = 0.05
    pipeline_stages: int = 3
    kv_quant_factor: float = 1.0
    mtp_factor: float = 1.0
    # fraction of extra MTP tokens accepted; 1.0 means no acceptance modeling
    mtp_acceptance: float = 1.0

    def __post_init__(self):
        # zero context is allowed as a degenerate case
        _require(self.avg_ctx >= 0, "avg_ctx", "must be >= 0")
        _require(self.tpot_sla > 0, "tpot_sla", "must be > 0")
        _require(self.pipeline_stages in (3, 4), "pipeline_stages", "must be 3 or 4")
        _require(self.kv_quant_factor >= 1, "kv_quant_factor", "must be >= 1")
        _require(self.mtp_factor >= 1, "mtp_factor", "must be >= 1")
        _require(0 <= self.mtp_acceptance <= 1, "mtp_acceptance", "must be in [0, 1]")

    @property
    def tokens_per_step(self) -> float:
        return 1 + (self.mtp_factor - 1) * self.mtp_acceptance

    def with_ctx(self, ctx: float) -> "Workload":
        return dataclasses.replace(self, avg_ctx=ctx)


# --------------------------------------------------------------------------
# catalog files

_QUANT_KEYS = {f.name for f in dataclasses.fields(QuantScheme)}
_GROUP_KEYS = {f.name for f in dataclasses.fields(AttentionLayerGroup)}
_MODEL_KEYS = {f.name for f in dataclasses.fields(ModelSpec)}
_ACCEL_KEYS = {f.name for f in dataclasses.fields(AcceleratorSpec)}
_MODEL_REQUIRED = _MODEL_KEYS - {"quant", "effective_rank", "label"}
_ACCEL_REQUIRED = {"name", "flops_16bit", "mem_bw", "net_bw_per_server"}
_FLOAT_FIELDS = {"moe_sparsity", "price_usd_per_hour", "flops_16bit", "flops_8bit",
                 "mem_bw", "net_bw_per_server", "net_efficiency"}


def _check_keys(raw: dict, allowed: set, required: set, where: str) -> None:
    if not isinstance(raw, dict):
        raise CatalogError(f"{where}: expected a table")
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise CatalogError(f"{where}: unknown key(s) {', '.join(unknown)}")
    missing = sorted(required - set(raw))
    if missing:
        raise CatalogError(f"{where}: missing key(s) {', '.join(missing)}")


def _coerce(raw: dict, where: str) -> dict:
    out = {}
    for k, v in raw.items():
        if isinstance(v, bool):
            raise CatalogError(f"{where}.{k}: booleans are not valid here")
        if k in _FLOAT_FIELDS and isinstance(v, int):
            v = float(v)
        elif k not in _FLOAT_FIELDS and isinstance(v, float) and k not in ("name", "kind", "label"):
            if not v.is_integer():
                raise CatalogError(f"{where}.{k}: expected an integer, got {v}")
            v = int(v)
        out[k] = v
    return out


def _build(cls, kwargs: dict, where: str):
    try:
        return cls(**kwargs)
    except CatalogError as e:
        raise CatalogError(f"{where}.{e}") from None
    except TypeError as e:
        raise CatalogError(f"{where}: {e}") from None


def _parse_model(raw: dict, where: str) -> ModelSpec:
    _check_keys(raw, _MODEL_KEYS, _MODEL_REQUIRED, where)
    groups = []
    for i, g in enumerate(raw["attention_groups"]):
        gw = f"{where}.attention_groups[{i}]"
        _check_keys(g, _GROUP_KEYS, {"kind", "layer_count"}, gw)
        groups.append(_build(AttentionLayerGroup, _coerce(g, gw), gw))
    kwargs = _coerce({k: v for k, v in raw.items() if k not in ("attention_groups", "quant")}, where)
    if "quant" in raw:
        qw = f"{where}.quant"
        _check_keys(raw["quant"], _QUANT_KEYS, set(), qw)
        kwargs["quant"] = _build(QuantScheme, _coerce(raw["quant"], qw), qw)
    kwargs["attention_groups"] = tuple(groups)
    return _build(ModelSpec, kwargs, where)


def _parse_accel(raw: dict, where: str) -> AcceleratorSpec:
    _check_keys(raw, _ACCEL_KEYS, _ACCEL_REQUIRED, where)
    return _build(AcceleratorSpec, _coerce(raw, where), where)


def parse_catalog(text: str, source: str = "<catalog>") -> tuple[list[ModelSpec], list[AcceleratorSpec]]:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise CatalogError(f"{source}: parse error: {e}") from None
    _check_keys(doc, {"models", "accelerators"}, set(), source)
    raw_models = doc.get("models", [])
    if not raw_models:
        raise CatalogError(f"{source}: no models defined")
    models = [_parse_model(m, f"models[{i}]") for i, m in enumerate(raw_models)]
    accels = [_parse_accel(a, f"accelerators[{i}]") for i, a in enumerate(doc.get("accelerators", []))]
    for kind, items in (("model", models), ("accelerator", accels)):
        seen = set()
        for it in items:
            if it.name in seen:
                raise CatalogError(f"{source}: duplicate {kind} name {it.name!r}")
            seen.add(it.name)
    return models, accels


def load_catalog(path: Union[str, Path]) -> tuple[list[ModelSpec], list[AcceleratorSpec]]:
    path = Path(path)
    return parse_catalog(path.read_text(encoding="utf-8"), str(path))


def _as_table(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if v is None:
            continue
        if dataclasses.is_dataclass(v):
            v = _as_table(v)
        elif isinstance(v, tuple):
            v = [_as_table(x) for x in v]
        out[f.name] = v
    return out


def dump_catalog(models: Iterable[ModelSpec], accels: Iterable[AcceleratorSpec]) -> str:
    """Serialize to the catalog schema; models then accelerators, each sorted by name."""
    doc = {
        "models": [_as_table(m) for m in sorted(models, key=lambda m: m.name)],
        "accelerators": [_as_table(a) for a in sorted(accels, key=lambda a: a.name)],
    }
    return tomli_w.dumps(doc)


@lru_cache(maxsize=1)
def _builtin() -> tuple[tuple[ModelSpec, ...], tuple[AcceleratorSpec, ...]]:
    text = resources.files("afdcost").joinpath("data/catalog.toml").read_text(encoding="utf-8")
    models, accels = parse_catalog(text, "builtin catalog")
    return tuple(models), tuple(accels)


def builtin_catalog() -> tuple[list[ModelSpec], list[AcceleratorSpec]]:
    models, accels = _builtin()
    return list(models), list(accels)


T = TypeVar("T", ModelSpec, AcceleratorSpec)


def lookup(items: Sequence[T], name: str) -> T:
    """Find by name (case-insensitive); the error lists what is available."""
    for it in items:
        if it.name.lower() == name.lower():
            return it
    avail = ", ".join(sorted(it.name for it in items))
    raise KeyError(f"unknown name {name!r}; available: {avail}")


def upcycled(model: ModelSpec, factor: int = 2) -> ModelSpec:
    """Grow the expert pool by ``factor`` while keeping activated parameters fixed."""
    added = (factor - 1) * model.ffn_total_weight_bytes // model.quant.weight_bytes
    return dataclasses.replace(
        model,
        name=f"{model.name}-x{factor}",
        label=f"{model.display} x{factor} experts",
        total_params=model.total_params + added,
        ffn_total_weight_bytes=model.ffn_total_weight_bytes * factor,
        moe_sparsity=model.moe_sparsity / factor,
    )
