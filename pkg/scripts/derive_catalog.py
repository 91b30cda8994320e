"""Derive bundled-catalog architecture fields from public model configs.

Prints per-token accounting at 8K/32K next to the reference table values so
the encoded catalog can be checked before it is frozen.  Standalone: imports
nothing from the package.
"""

# Dimensions transcribed from the public HF config.json of each model.
CONFIGS = {
    "step3": dict(L=61, H=7168, q_lora=2048, heads=64, head_dim=256,
                  dense_layers=5, dense_inter=18432, moe_layers=56,
                  experts=48, shared=1, topk=3, expert_inter=5120),
    "dsv3": dict(L=61, H=7168, q_lora=1536, heads=128, nope=128, rope=64, v_head=128,
                 kv_lora=512, dense_layers=3, dense_inter=18432, moe_layers=58,
                 experts=256, shared=1, topk=8, expert_inter=2048),
    "kimi-k2": dict(L=61, H=7168, q_lora=1536, heads=64, nope=128, rope=64, v_head=128,
                    kv_lora=512, dense_layers=1, dense_inter=18432, moe_layers=60,
                    experts=384, shared=1, topk=8, expert_inter=2048),
    "qwen3-moe": dict(L=94, H=4096, heads=64, kv_heads=4, head_dim=128,
                      dense_layers=0, dense_inter=0, moe_layers=94,
                      experts=128, shared=0, topk=8, expert_inter=1536),
    "qwen3-32b": dict(L=64, H=5120, heads=64, kv_heads=8, head_dim=128,
                      dense_layers=64, dense_inter=25600, moe_layers=0,
                      experts=0, shared=0, topk=0, expert_inter=0),
    "llama4-maverick": dict(L=48, H=5120, heads=40, kv_heads=8, head_dim=128,
                            full_layers=12, chunk=8192,
                            dense_layers=24, dense_inter=16384, moe_layers=24,
                            experts=128, shared=1, topk=1, expert_inter=8192),
    "minimax-m1": dict(L=80, H=6144, heads=64, kv_heads=8, head_dim=128, full_layers=10,
                       dense_layers=0, dense_inter=0, moe_layers=80,
                       experts=32, shared=0, topk=2, expert_inter=9216),
    "ernie-4.5": dict(L=54, H=8192, heads=64, kv_heads=8, head_dim=128,
                      dense_layers=3, dense_inter=28672, moe_layers=51,
                      experts=64, shared=0, topk=8, expert_inter=3584),
    "pangu-pro-moe": dict(L=48, H=5120, heads=40, kv_heads=8, head_dim=128,
                          dense_layers=0, dense_inter=0, moe_layers=48,
                          experts=64, shared=4, topk=8, expert_inter=1344),
}

TABLE_8K = {  # kv bytes, attn flops, linear flops, ffn flops
    "dsv3": (2.88e8, 1.47e11, 2.28e10, 4.84e10),
    "kimi-k2": (2.88e8, 7.37e10, 1.23e10, 4.84e10),
    "qwen3-moe": (7.89e8, 2.52e10, 1.34e10, 2.84e10),
    "qwen3-32b": (1.07e9, 1.72e10, 1.21e10, 5.03e10),
    "llama4-maverick": (1.01e9, 8.05e9, 6.04e9, 2.42e10),
    "minimax-m1": (9.23e8, 3.42e9, 3.75e10, 5.44e10),
    "ernie-4.5": (9.06e8, 1.45e10, 1.63e10, 7.61e10),
    "pangu-pro-moe": (8.05e8, 8.05e9, 6.04e9, 2.38e10),
    "step3": (2.56e8, 3.27e10, 2.07e10, 5.33e10),
}
TABLE_32K = {
    "dsv3": (1.15e9, 5.89e11, 2.28e10, 4.84e10),
    "kimi-k2": (1.15e9, 2.95e11, 1.23e10, 4.84e10),
    "qwen3-moe": (3.15e9, 1.01e11, 1.34e10, 2.84e10),
    "qwen3-32b": (4.29e9, 6.87e10, 1.21e10, 5.03e10),
    "llama4-maverick": (2.21e9, 1.41e10, 6.04e9, 2.42e10),
    "minimax-m1": (1.93e9, 1.15e10, 3.75e10, 5.44e10),
    "ernie-4.5": (3.62e9, 5.80e10, 1.63e10, 7.61e10),
    "pangu-pro-moe": (3.22e9, 3.22e10, 6.04e9, 2.38e10),
    "step3": (1.02e9, 1.31e11, 2.07e10, 5.33e10),
}


def ffn(c):
    dense = c["dense_layers"] * 3 * c["H"] * c["dense_inter"]
    expert = 3 * c["H"] * c["expert_inter"]
    active = dense + c["moe_layers"] * (c["topk"] + c["shared"]) * expert
    total = dense + c["moe_layers"] * (c["experts"] + c["shared"]) * expert
    return active, total


def mla_linear(c):
    H, h = c["H"], c["heads"]
    qk = c["nope"] + c["rope"]
    per = (H * c["q_lora"] + c["q_lora"] * h * qk + H * (c["kv_lora"] + c["rope"])
           + c["kv_lora"] * h * (c["nope"] + c["v_head"]) + h * c["v_head"] * H)
    return c["L"] * per


def gqa_linear(c, layers=None):
    H, q = c["H"], c["heads"] * c["head_dim"]
    kv = c["kv_heads"] * c["head_dim"]
    return (layers if layers is not None else c["L"]) * (2 * H * q + 2 * H * kv)


def derive(name, ctx):
    c = CONFIGS[name]
    if name == "step3":
        kv = c["L"] * 2 * c["head_dim"] * 1 * ctx
        flops = c["L"] * 2 * c["heads"] * 2 * c["head_dim"] * ctx
        q = c["heads"] * c["head_dim"]
        lin = c["L"] * (c["H"] * c["q_lora"] + c["q_lora"] * q + 2 * c["H"] * c["head_dim"] + q * c["H"])
    elif name in ("dsv3", "kimi-k2"):
        kv = c["L"] * (c["kv_lora"] + c["rope"]) * ctx
        flops = c["L"] * 2 * c["heads"] * 2 * (c["kv_lora"] + c["rope"]) * ctx
        lin = mla_linear(c)
    elif name == "llama4-maverick":
        full, win = c["full_layers"], c["L"] - c["full_layers"]
        per_kv = 2 * c["kv_heads"] * c["head_dim"]
        kv = full * per_kv * 2 * ctx + win * per_kv * 1 * min(ctx, c["chunk"])
        f = 2 * c["heads"] * 2 * c["head_dim"]
        flops = full * f * ctx + win * f * min(ctx, c["chunk"])
        lin = gqa_linear(c)
    elif name == "minimax-m1":
        full, lin_layers = c["full_layers"], c["L"] - c["full_layers"]
        state = c["heads"] * c["head_dim"] ** 2 * 4 * 2   # fp32 state, read + write
        kv = full * 2 * c["kv_heads"] * c["head_dim"] * 2 * ctx + lin_layers * state
        flops = (full * 2 * c["heads"] * 2 * c["head_dim"] * ctx
                 + lin_layers * 10 * c["heads"] * c["head_dim"] ** 2)
        # lightning layers: q, k, v, gate, o are all H x heads*head_dim
        lin = lin_layers * 5 * c["H"] * c["heads"] * c["head_dim"] + gqa_linear(c, full)
    else:
        kv = c["L"] * 2 * c["kv_heads"] * c["head_dim"] * ctx
        flops = c["L"] * 2 * c["heads"] * 2 * c["head_dim"] * ctx
        lin = gqa_linear(c)
    act, total = ffn(c)
    return kv, flops, 2 * lin, 2 * act, lin, act, total


if __name__ == "__main__":
    worst = 0.0
    for name in CONFIGS:
        for ctx, table in ((8192, TABLE_8K), (32768, TABLE_32K)):
            kv, fl, li, ff, lin_p, act_p, tot = derive(name, ctx)
            errs = [abs(a / b - 1) for a, b in zip((kv, fl, li, ff), table[name])]
            worst = max(worst, *errs)
            print(f"{name:16s} {ctx:6d} kv={kv:.3e} attn={fl:.3e} lin={li:.3e} ffn={ff:.3e} "
                  f"maxerr={max(errs):.4f}")
        print(f"{'':16s} attn_linear_params={lin_p} ffn_activated_params={act_p} "
              f"ffn_total_weight_bytes={tot}")
    print(f"worst relative error: {worst:.4f}")
