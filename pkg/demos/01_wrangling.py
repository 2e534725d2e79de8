"""Curating one country's hourly demand series.

Walks through the four curation steps on a synthetic country with planted
defects: a meter spike, an isolated dropped sample and a 30-hour outage.

    $ python demos/01_wrangling.py
"""
import numpy as np

from loadtl.data import LoadSeries, synthesize_dataset, two_family_presets
from loadtl.wrangling import ImputationParams, blend_weight, wrangle


def main():
    ds = synthesize_dataset(seed=1, families=two_family_presets(), countries_per_family=1, years=2)
    clean = ds.series["AA"]
    values = clean.values.copy()

    # Plant the defects a real export tends to have.
    spike, dropped, outage = 5000, 7001, slice(9000, 9030)
    values[spike] *= 3.0
    values[dropped] = np.nan
    values[outage] = np.nan
    dirty = LoadSeries(clean.country_code, clean.timezone_id, clean.start, values, np.isnan(values))
    print(f"{dirty.country_code}: {len(values)} hours, {int(dirty.missing_mask.sum())} missing before curation")

    curated, summary = wrangle(dirty, multiplier=4.5, params=ImputationParams(a=0.3))
    print(f"outliers removed: {summary.n_outliers} (planted spike at hour {spike} "
          f"{'caught' if summary.n_outliers and spike in _outlier_positions(dirty, summary) else 'missed'})")
    print(f"samples imputed:  {summary.imputed}")

    # Short gaps lean on linear interpolation, long gaps on last month's same hour and weekday.
    print("linear-interpolation weight by distance to the nearest observation:")
    for d in (1, 3, 10, 15):
        print(f"  d={d:>2}  w={float(blend_weight(d)):.3f}")

    err = np.abs(curated.values[outage] - clean.values[outage]) / clean.values[outage] * 100
    print(f"outage reconstruction error vs the untouched series: mean {err.mean():.2f}%  max {err.max():.2f}%")
    print(f"isolated sample: true {clean.values[dropped]:.1f}, imputed {curated.values[dropped]:.1f}")


def _outlier_positions(series, summary):
    return {series.position(ts) for ts, *_ in summary.outliers.removed}


if __name__ == "__main__":
    main()
