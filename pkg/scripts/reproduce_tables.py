"""Print the headline numbers: unit costs, cost tables, sparsity bounds,
weak-hardware sizing, the plan search summary and one simulated plan.

    python3 scripts/reproduce_tables.py [--format table|csv|jsonl]
"""

import argparse

from afdcost.cli import run

SECTIONS = [
    ("unit costs", ["units", "--accel", "H800", "--accel", "H20", "--accel", "A800", "--accel", "910B"]),
    ("cost per 1M tokens, 8K context", ["cost", "--ctx", "8192", "--binding"]),
    ("cost per 1M tokens, 32K context", ["cost", "--ctx", "32768", "--binding"]),
    ("minimum MoE sparsity for Step-3", ["sparsity", "--model", "step3"]),
    ("minimum MoE sparsity, network at 80%", ["sparsity", "--model", "step3", "--accel", "H800",
                                              "--net-efficiency", "0.8"]),
    ("sizing on L20 and L4", ["size", "--model", "step3"]),
    ("best vetted plan per model", ["pareto"]),
    ("2A2F on H800, 4K context", ["simulate", "--plan", "2A2F", "--ctx", "4096"]),
]


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--format", choices=("table", "csv", "jsonl"), default="table")
    args = p.parse_args()
    for title, argv in SECTIONS:
        print(f"## {title}")
        run(argv + ["--format", args.format])
        print()


if __name__ == "__main__":
    main()
