"""Write the plot-data CSVs (Pareto points, deployment costs, KV growth,
intensity vs roofline) into a directory.

    python3 scripts/emit_plot_data.py out/ [--context 8192 --context 32768]
"""

import argparse
from pathlib import Path

from afdcost.catalog import builtin_catalog, load_catalog
from afdcost.cli import write_plot_data


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out", type=Path)
    p.add_argument("--context", dest="contexts", type=int, action="append")
    p.add_argument("--catalog", help="TOML catalog file (default: the bundled catalog)")
    p.add_argument("--strict-sparsity", action="store_true")
    args = p.parse_args()
    models, accels = load_catalog(args.catalog) if args.catalog else builtin_catalog()
    for path in write_plot_data(args.out, models, accels, args.contexts or [8192, 32768], args.strict_sparsity):
        print(path)


if __name__ == "__main__":
    main()
