"""Command-line front end.

Exit status is 0 on success, 1 when the answer is a domain failure (an
infeasible sizing, no vetted plan, hardware without a price) and 2 for
usage or catalog errors.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import costmodel, moeplan, pipesim, planner, sizing
from .catalog import CatalogError, Workload, builtin_catalog, load_catalog, lookup

FORMATS = ("table", "csv", "jsonl")

USD = "usd"
SIG = "sig"
INT = "int"
STR = "str"
BOOL = "bool"


class UsageError(Exception):
    pass


class DomainError(Exception):
    pass


@dataclass
class Report:
    columns: list
    kinds: list
    rows: list
    exit_code: int = 0


def sig3(v: float) -> str:
    x = float(f"{v:.3g}")
    if x.is_integer() and abs(x) < 1e16:
        return str(int(x))
    return f"{x:g}"


def _cell(v, kind: str) -> str:
    if v is None:
        return "N/A"
    if kind == USD:
        return f"{v:.3f}"
    if kind == SIG:
        return sig3(v)
    if kind == INT:
        return str(int(v))
    if kind == BOOL:
        return "true" if v else "false"
    return str(v)


def _json_value(v, kind: str):
    if v is None:
        return None
    if kind == USD:
        return round(v, 3)
    if kind == SIG:
        return float(sig3(v))
    if kind == INT:
        return int(v)
    if kind == BOOL:
        return bool(v)
    return str(v)


def render(report: Report, fmt: str) -> str:
    if fmt == "jsonl":
        lines = [json.dumps({c: _json_value(v, k) for c, k, v in zip(report.columns, report.kinds, row)})
                 for row in report.rows]
        return "".join(line + "\n" for line in lines)
    cells = [[_cell(v, k) for v, k in zip(row, report.kinds)] for row in report.rows]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(report.columns)
        w.writerows(cells)
        return buf.getvalue()
    widths = [max(len(c), *(len(r[i]) for r in cells)) if cells else len(c) for i, c in enumerate(report.columns)]
    out = ["  ".join(c.ljust(widths[i]) for i, c in enumerate(report.columns)).rstrip()]
    out.append("  ".join("-" * w for w in widths))
    for r in cells:
        # numbers right-aligned, text left-aligned
        parts = [v.rjust(widths[i]) if report.kinds[i] in (USD, SIG, INT) else v.ljust(widths[i])
                 for i, v in enumerate(r)]
        out.append("  ".join(parts).rstrip())
    return "\n".join(out) + "\n"


def _load(args):
    try:
        if args.catalog:
            return load_catalog(args.catalog)
        return builtin_catalog()
    except (CatalogError, OSError) as e:
        raise UsageError(str(e)) from None


def _pick(items, names: Optional[Sequence[str]]):
    if not names:
        return list(items)
    try:
        return [lookup(items, n) for n in names]
    except KeyError as e:
        raise UsageError(e.args[0]) from None


def _workload(args, ctx: Optional[int] = None) -> Workload:
    try:
        return Workload(
            avg_ctx=args.ctx if ctx is None else ctx,
            tpot_sla=args.tpot,
            pipeline_stages=args.stages,
            kv_quant_factor=args.kv_quant,
            mtp_factor=args.mtp,
        )
    except ValueError as e:
        raise UsageError(str(e)) from None


def cmd_cost(args, models, accels) -> Report:
    models = _pick(models, args.model)
    accels = costmodel.priced(_pick(accels, args.accel))
    if not accels:
        raise DomainError("no priced accelerator selected")
    w = _workload(args)
    table = costmodel.cost_table(models, accels, w)
    cols = ["model"] + [f"attn_{a.name}" for a in accels] + [f"ffn_{a.name}" for a in accels]
    rows = []
    for m, row in zip(models, table):
        attn = [q.attn_usd_per_1m if isinstance(q, costmodel.CostQuote) else None for q in row]
        ffn = [q.ffn_usd_per_1m if isinstance(q, costmodel.CostQuote) else None for q in row]
        rows.append([m.name] + attn + ffn)
    if args.binding:
        cols += [f"bound_{a.name}" for a in accels]
        for r, row in zip(rows, table):
            r += [q.binding_constraint if isinstance(q, costmodel.CostQuote) else None for q in row]
    kinds = [STR] + [USD] * (2 * len(accels)) + ([STR] * len(accels) if args.binding else [])
    return Report(cols, kinds, rows)


def cmd_units(args, models, accels) -> Report:
    rows = []
    for a in _pick(accels, args.accel):
        for kind in ("eight_bit", "sixteen_bit"):
            if not a.has_rate(kind):
                rows.append([a.name, kind, None, None, None])
                continue
            if not a.priced:
                rows.append([a.name, kind, a.roofline(kind), None, None])
                continue
            u = costmodel.unit_costs(a, kind)
            rows.append([a.name, kind, a.roofline(kind), u.u_flop, u.u_byte])
    return Report(["accel", "compute_kind", "roofline", "u_flop", "u_byte"], [STR, STR, SIG, SIG, SIG], rows)


def cmd_intensity(args, models, accels) -> Report:
    w = _workload(args)
    rows = []
    for m in _pick(models, args.model):
        for i, g in enumerate(m.attention_groups):
            rows.append([m.name, i, g.kind, g.layer_count, costmodel.group_intensity(g, w)])
    return Report(["model", "group", "kind", "layers", "flop_per_byte"], [STR, INT, STR, INT, SIG], rows)


def cmd_sparsity(args, models, accels) -> Report:
    w = _workload(args)
    if w.pipeline_stages != 3:
        raise UsageError("minimum sparsity is only defined for --stages 3")
    rows = []
    pool = _pick(accels, args.accel) if args.accel else costmodel.priced(accels)
    for m in _pick(models, args.model):
        for a in pool:
            if args.net_efficiency is not None:
                a = dataclasses.replace(a, net_efficiency=args.net_efficiency)
            r = moeplan.min_sparsity(a, m, w)
            rows.append([m.name, a.name, r.b_dense, r.b_moe, r.net_bytes_per_layer, r.s_min, m.moe_sparsity,
                         r.feasible])
    return Report(["model", "accel", "b_dense", "b_moe", "net_bytes_per_layer", "s_min", "sparsity", "feasible"],
                  [STR, STR, INT, INT, SIG, SIG, SIG, BOOL], rows)


def cmd_size(args, models, accels) -> Report:
    w = _workload(args)
    names = args.accel or [a.name for a in accels if not a.priced]
    rows = []
    ok = True
    for m in _pick(models, args.model or ["step3"]):
        for a in _pick(accels, names):
            r = sizing.size(a, m, w, args.linear_bytes, args.bw_fraction)
            ok &= r.feasible
            rows.append([m.name, a.name, r.stage_budget * 1e6, r.attn_bytes_budget, r.kv_budget, r.max_ctx_tokens,
                         r.requests_at(args.request_ctx), r.ffn_bytes_per_device, r.servers_needed, r.cards_needed,
                         r.feasible, r.reason or ""])
    cols = ["model", "accel", "stage_budget_us", "attn_bytes_budget", "kv_budget", "max_ctx_tokens",
            f"requests_at_{args.request_ctx}", "ffn_bytes_per_device", "servers", "cards", "feasible", "reason"]
    kinds = [STR, STR, SIG, SIG, SIG, INT, INT, SIG, INT, INT, BOOL, STR]
    return Report(cols, kinds, rows, 0 if ok else 1)


def _plan_row(m, p: planner.DeploymentPlan) -> list:
    f = p.flags
    return [m.name, p.mode, p.name, p.attn_hw, p.ffn_hw, p.micro_batch, p.total_batch, p.predicted_tgs,
            p.theoretical_usd_per_1m, f.sparsity_ok, f.net_ok, f.stage_ok, f.relies_on_large_ep]


PLAN_COLS = ["model", "mode", "plan", "attn_hw", "ffn_hw", "micro_batch", "total_batch", "predicted_tgs",
             "usd_per_1m", "sparsity_ok", "net_ok", "stage_ok", "relies_on_large_ep"]
PLAN_KINDS = [STR, STR, STR, STR, STR, INT, INT, SIG, USD, BOOL, BOOL, BOOL, BOOL]


def cmd_plan(args, models, accels) -> Report:
    w = _workload(args)
    modes = [args.mode] if args.mode else list(planner.MODES)
    rows = []
    missing = []
    for m in _pick(models, args.model):
        plans = planner.search(m, w, accels, args.strict_sparsity, modes)
        if not plans:
            missing.append(m.name)
        rows += [_plan_row(m, p) for p in plans[: args.top]]
    if missing:
        print(f"no vetted plan for: {', '.join(missing)}", file=sys.stderr)
    return Report(PLAN_COLS, PLAN_KINDS, rows, 1 if missing else 0)


def cmd_pareto(args, models, accels) -> Report:
    models = _pick(models, args.model)
    contexts = args.contexts or [8192, 32768]
    base = _workload(args, contexts[0])
    rows = []
    for ctx in contexts:
        for p in planner.pareto(models, base.with_ctx(ctx), accels, args.strict_sparsity):
            rows.append([ctx, p.model, p.activated_params, p.best_usd_per_1m, p.plan.mode, p.plan.attn_hw,
                         p.plan.ffn_hw, p.plan.name, p.on_frontier, p.plan.flags.relies_on_large_ep])
    if args.points:
        Path(args.points).write_text(planner.pareto_csv(models, contexts, accels, args.strict_sparsity, base),
                                     encoding="utf-8")
    if args.plot_dir:
        write_plot_data(Path(args.plot_dir), models, accels, contexts, args.strict_sparsity, base)
    return Report(["ctx", "model", "activated_params", "usd_per_1m", "mode", "attn_hw", "ffn_hw", "plan",
                   "on_frontier", "relies_on_large_ep"],
                  [INT, STR, SIG, USD, STR, STR, STR, STR, BOOL, BOOL], rows)


def write_plot_data(out: Path, models, accels, contexts, strict: bool = False,
                    base: Optional[Workload] = None) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    bars = [m for m in models if m.name in planner.BAR_MODELS] or list(models)
    hybrids = [m for m in models if len(m.attention_groups) > 1 or m.name in ("step3", "dsv3")]
    files = {
        "pareto_points.csv": planner.pareto_csv(models, contexts, accels, strict, base),
        "deployment_costs.csv": planner.deployment_bars_csv(bars, contexts, accels, base),
        "kv_growth.csv": planner.kv_growth_csv(hybrids or list(models), [2 ** k for k in range(10, 18)], accels,
                                               base),
        "intensity.csv": planner.intensity_csv(models, accels, base),
    }
    written = []
    for name, text in files.items():
        p = out / name
        p.write_text(text, encoding="utf-8")
        written.append(p)
    return written


PLAN_RE = re.compile(r"^(\d+)A(\d+)F$", re.IGNORECASE)


def cmd_simulate(args, models, accels) -> Report:
    m = _pick(models, [args.model])[0]
    w = _workload(args)
    match = PLAN_RE.match(args.plan)
    if not match:
        raise UsageError(f"--plan must look like 2A2F, got {args.plan!r}")
    n_a, n_f = int(match.group(1)), int(match.group(2))
    ffn_hw = args.ffn_hw or args.attn_hw
    mode = planner.COLOCATED if ffn_hw.lower() == args.attn_hw.lower() and args.colocated else planner.AFD
    try:
        plan = planner.make_plan(m, w, accels, args.attn_hw, n_a, ffn_hw, n_f, args.micro_batch, mode)
    except KeyError as e:
        raise UsageError(e.args[0]) from None
    times = pipesim.derive_stage_times(m, plan, w, accels)
    res = pipesim.simulate(times, plan, args.links, w.tpot_sla)
    if args.trace:
        Path(args.trace).write_text(res.trace_csv(), encoding="utf-8")
    bound = pipesim.analytic_tpot_bound(times, plan, args.links)
    rows = [[m.name, plan.name, plan.attn_hw, plan.ffn_hw, plan.micro_batch, plan.total_batch, plan.total_gpus,
             res.tpot * 1e3, bound * 1e3, res.tpot <= w.tpot_sla, res.sla_tgs, res.tgs, plan.predicted_tgs,
             res.utilization.get("attention"), res.utilization.get("ffn"),
             res.bubble_fraction.get("ffn"), plan.flags.net_ok, plan.flags.stage_ok]]
    cols = ["model", "plan", "attn_hw", "ffn_hw", "micro_batch", "total_batch", "gpus", "tpot_ms",
            "analytic_bound_ms", "meets_sla", "tgs_at_sla", "tgs_raw", "predicted_tgs", "util_attention",
            "util_ffn", "bubble_ffn", "net_ok", "stage_ok"]
    kinds = [STR, STR, STR, STR, INT, INT, INT, SIG, SIG, BOOL, SIG, SIG, SIG, SIG, SIG, SIG, BOOL, BOOL]
    return Report(cols, kinds, rows, 0 if res.tpot <= w.tpot_sla else 1)


def _positive_int(s: str) -> int:
    v = int(s)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {s}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--catalog", help="TOML catalog file (default: the bundled catalog)")
    common.add_argument("--format", choices=FORMATS, default="table")
    common.add_argument("--output", "-o", help="write the report here instead of standard output")

    wl = argparse.ArgumentParser(add_help=False)
    wl.add_argument("--ctx", type=int, default=8192, help="average context length in tokens")
    wl.add_argument("--tpot", type=float, default=0.05, help="TPOT SLA in seconds")
    wl.add_argument("--stages", type=int, choices=(3, 4), default=3)
    wl.add_argument("--kv-quant", type=float, default=1.0, help="divide KV bytes read by this factor")
    wl.add_argument("--mtp", type=float, default=1.0, help="tokens scored per decode step")

    filt = argparse.ArgumentParser(add_help=False)
    filt.add_argument("--model", action="append", help="model name (repeatable)")
    filt.add_argument("--accel", action="append", help="accelerator name (repeatable)")

    p = argparse.ArgumentParser(prog="afdcost", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("cost", parents=[common, wl, filt], help="USD per 1M tokens for attention and FFN")
    s.add_argument("--binding", action="store_true", help="add memory/compute-bound columns")
    sub.add_parser("units", parents=[common, filt], help="unit FLOP and byte costs")
    sub.add_parser("intensity", parents=[common, wl, filt], help="attention arithmetic intensity")
    s = sub.add_parser("sparsity", parents=[common, wl, filt], help="minimum MoE sparsity per accelerator")
    s.add_argument("--net-efficiency", type=float, help="override every accelerator's network efficiency")
    s = sub.add_parser("size", parents=[common, wl, filt], help="weak-hardware sizing")
    s.add_argument("--linear-bytes", type=float, default=sizing.DEFAULT_LINEAR_BYTES)
    s.add_argument("--bw-fraction", type=float, default=sizing.DEFAULT_BW_FRACTION)
    s.add_argument("--request-ctx", type=_positive_int, default=8192)
    s = sub.add_parser("plan", parents=[common, wl, filt], help="search vetted deployment plans")
    s.add_argument("--strict-sparsity", action="store_true", help="reject plans that rely on large EP")
    s.add_argument("--mode", choices=planner.MODES)
    s.add_argument("--top", type=_positive_int, default=5)
    s = sub.add_parser("pareto", parents=[common, wl, filt], help="per-model best cost vs activated params")
    s.add_argument("--strict-sparsity", action="store_true")
    s.add_argument("--context", dest="contexts", type=_positive_int, action="append",
                   help="context to evaluate (repeatable, default 8192 and 32768)")
    s.add_argument("--points", help="also write the points CSV here")
    s.add_argument("--plot-dir", help="write all plot-data CSVs into this directory")

    s = sub.add_parser("simulate", parents=[common, wl], help="discrete-event pipeline simulation")
    s.add_argument("--model", default="step3")
    s.add_argument("--plan", default="2A2F", help="instance mix such as 2A2F")
    s.add_argument("--attn-hw", default="H800")
    s.add_argument("--ffn-hw")
    s.add_argument("--colocated", action="store_true")
    s.add_argument("--micro-batch", type=_positive_int, default=2048)
    s.add_argument("--links", choices=(pipesim.INDEPENDENT, pipesim.SHARED), default=pipesim.INDEPENDENT)
    s.add_argument("--trace", help="write the event trace CSV here")
    return p


COMMANDS = {
    "cost": cmd_cost,
    "units": cmd_units,
    "intensity": cmd_intensity,
    "sparsity": cmd_sparsity,
    "size": cmd_size,
    "plan": cmd_plan,
    "pareto": cmd_pareto,
    "simulate": cmd_simulate,
}


def run(argv: Optional[Sequence[str]] = None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        models, accels = _load(args)
        report = COMMANDS[args.command](args, models, accels)
    except UsageError as e:
        print(f"afdcost: error: {e}", file=sys.stderr)
        return 2
    except (DomainError, costmodel.CostError) as e:
        print(f"afdcost: {e}", file=sys.stderr)
        return 1
    text = render(report, args.format)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        stdout.write(text)
    return report.exit_code


def main() -> None:
    sys.exit(run())
