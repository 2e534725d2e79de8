"""Rebuilding the comparison tables from published per-country MAPEs.

Feeds the 27-country results table shipped with the tests into the reporting
module and prints the average-improvement row and the per-cluster averages
next to the published ones. Small disagreements come from rounding in the
published tables themselves.

    $ python demos/04_published_tables.py [out_dir]
"""
import sys
from pathlib import Path

import pandas as pd

from loadtl.evaluation import SETUPS, comparison_table, improvement_table, summarize, write_report

FIXTURES = Path(__file__).resolve().parents[1] / "tests" / "fixtures"


def main(out_dir=None):
    df = pd.read_csv(FIXTURES / "published_country_mape.csv")
    rows = df.melt(id_vars=["country"], value_vars=list(SETUPS), var_name="setup", value_name="mape")
    table = comparison_table(rows, dict(zip(df.country, df.cluster)))

    printed = pd.read_csv(FIXTURES / "published_improvement.csv").set_index("setup").improvement
    ours = improvement_table(table)
    print("average improvement over Baseline (MAPE points)")
    for setup in printed.index:
        print(f"  {setup:<12} recomputed {ours[setup]:+.4f}   published {printed[setup]:+.2f}")

    clusters = pd.read_csv(FIXTURES / "published_cluster_mape.csv").set_index("cluster")
    summary = summarize(table)
    print("\ncluster averages, recomputed / published")
    for k in clusters.index:
        cells = "  ".join(f"{s} {summary.loc[k, s]:.3f}/{clusters.loc[k, s]:.2f}" for s in SETUPS)
        print(f"  {k}: {cells}   best {summary.loc[k, 'best_setup']}")

    print("\nbest setup per country:", table.best_setup.value_counts().to_dict())
    if out_dir:
        paths = write_report(table, Path(out_dir))
        print("wrote", ", ".join(str(p) for p in paths.values()))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else None)
