"""MAPE, per-country/per-cluster comparison tables and plot-ready exports."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd

BASELINE, ABO, CBO, SNAIVE = "Baseline", "AbO", "CbO", "sNaive(168)"
SETUPS = (BASELINE, ABO, CBO, SNAIVE)
TL_SETUPS = (ABO, CBO)


def mape(actuals, forecasts) -> float:
    """Mean absolute percentage error, in percent."""
    y = np.asarray(actuals, dtype=np.float64).ravel()
    f = np.asarray(forecasts, dtype=np.float64).ravel()
    if y.shape != f.shape:
        raise ValueError(f"length mismatch: {y.size} actuals vs {f.size} forecasts")
    if y.size == 0:
        raise ValueError("empty input")
    if np.any(y == 0):
        raise ValueError("zero actual value; data was not sanitized")
    return float(np.mean(np.abs((y - f) / y)) * 100.0)


def comparison_table(rows: pd.DataFrame, clusters: Mapping[str, int] | None = None) -> pd.DataFrame:
    """Pivot long ``country, setup, mape`` rows into one row per country.

    Adds the cluster column when ``clusters`` is given and a best-model
    column naming the lowest-MAPE transfer setup.
    """
    missing = {"country", "setup", "mape"} - set(rows.columns)
    if missing:
        raise ValueError(f"rows lack columns {sorted(missing)}")
    wide = rows.pivot(index="country", columns="setup", values="mape")
    wide = wide.reindex(columns=[s for s in SETUPS if s in wide.columns])
    wide.columns.name = None
    if clusters is not None:
        wide.insert(0, "cluster", [clusters[c] for c in wide.index])
    tl = [s for s in TL_SETUPS if s in wide.columns]
    if tl:
        wide["best_setup"] = wide[tl].idxmin(axis=1)
        wide["best_mape"] = wide[tl].min(axis=1)
    return wide


def improvement_table(table: pd.DataFrame) -> pd.Series:
    """Mean over countries of ``baseline - setup`` (positive is better), plus
    the best-transfer improvement ``baseline - min(AbO, CbO)``."""
    if BASELINE not in table.columns:
        raise ValueError("baseline column required")
    base = table[BASELINE]
    out = {s: float((base - table[s]).mean()) for s in SETUPS if s in table.columns and s != BASELINE}
    tl = [s for s in TL_SETUPS if s in table.columns]
    if tl:
        out["best_TL"] = float((base - table[tl].min(axis=1)).mean())
    return pd.Series(out, name="average_improvement")


def summarize(table: pd.DataFrame, clusters: Mapping[str, int] | None = None) -> pd.DataFrame:
    """Unweighted per-cluster mean MAPE per setup with a best-transfer column."""
    t = table.copy()
    if "cluster" not in t.columns:
        if clusters is None:
            raise ValueError("cluster assignment required")
        t.insert(0, "cluster", [clusters[c] for c in t.index])
    setups = [s for s in SETUPS if s in t.columns]
    if t[setups].isna().any().any():
        bad = t.index[t[setups].isna().any(axis=1)].tolist()
        raise ValueError(f"missing setup rows for {bad}")
    out = t.groupby("cluster")[setups].mean()
    tl = [s for s in TL_SETUPS if s in out.columns]
    if tl:
        out["best_setup"] = out[tl].idxmin(axis=1)
    return out


def write_report(table: pd.DataFrame, out_dir, clusters: Mapping[str, int] | None = None) -> dict[str, Path]:
    """Write Table-3 and Table-4 shaped CSVs and long-format bar-plot data."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    imp = improvement_table(table)
    t3 = table.copy()
    t3.loc["Average Improvement"] = {k: imp.get(k, np.nan) for k in t3.columns if k in imp.index}
    if "best_TL" in imp.index and "best_mape" in t3.columns:
        t3.loc["Average Improvement", "best_mape"] = imp["best_TL"]
        t3.loc["Average Improvement", "best_setup"] = "TL"
    paths["table_countries"] = out_dir / "table_countries.csv"
    t3.to_csv(paths["table_countries"], index_label="country", float_format="%.17g", lineterminator="\n")
    if "cluster" in table.columns or clusters is not None:
        t4 = summarize(table, clusters)
        paths["table_clusters"] = out_dir / "table_clusters.csv"
        t4.to_csv(paths["table_clusters"], float_format="%.17g", lineterminator="\n")
        bars = t4[[s for s in SETUPS if s in t4.columns]].reset_index().melt(
            id_vars="cluster", var_name="setup", value_name="mape")
        paths["plot_clusters"] = out_dir / "plot_cluster_bars.csv"
        bars.to_csv(paths["plot_clusters"], index=False, float_format="%.17g", lineterminator="\n")
    bars = table[[s for s in SETUPS if s in table.columns]].reset_index().melt(
        id_vars="country", var_name="setup", value_name="mape")
    paths["plot_countries"] = out_dir / "plot_country_bars.csv"
    bars.to_csv(paths["plot_countries"], index=False, float_format="%.17g", lineterminator="\n")
    return paths


def bar_svg(table: pd.DataFrame, path) -> Path | None:
    """Side-by-side MAPE bars per row; skipped when matplotlib is absent."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return None
    setups = [s for s in SETUPS if s in table.columns]
    x = np.arange(len(table))
    width = 0.8 / max(len(setups), 1)
    fig, ax = plt.subplots(figsize=(max(6, 0.5 * len(table)), 4))
    for i, s in enumerate(setups):
        ax.bar(x + i * width, table[s].to_numpy(dtype=float), width, label=s)
    ax.set_xticks(x + width * (len(setups) - 1) / 2)
    ax.set_xticklabels([str(i) for i in table.index], rotation=90)
    ax.set_ylabel("MAPE (%)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)
