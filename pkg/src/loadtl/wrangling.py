"""Data curation: duplicates, monthly outliers, local time and hybrid imputation.

The order applied by :func:`wrangle` is duplicates -> outliers -> local time
-> imputation.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

import numpy as np
import pandas as pd

from .data import DataError, LoadSeries, rows_to_series

log = logging.getLogger(__name__)

LOG_HEADER = ("timestamp", "original", "action", "detail")


@dataclass(frozen=True)
class OutlierReport:
    country_code: str
    removed: list[tuple[pd.Timestamp, float, float, float]]  # (timestamp, value, month_mean, month_std)
    threshold_multiplier: float = 4.5

    def __len__(self):
        return len(self.removed)

    def log_rows(self) -> list[tuple]:
        return [(ts, v, "outlier_removed", f"month_mean={mu!r};month_std={sd!r}")
                for ts, v, mu, sd in self.removed]


@dataclass(frozen=True)
class ImputationParams:
    a: float = 0.3
    history_weeks: int = 4

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("decay parameter a must be > 0")
        if self.history_weeks < 1:
            raise ValueError("history_weeks must be >= 1")


def remove_duplicates(raw_rows: pd.DataFrame, country_code: str = "", timezone_id: str = "UTC",
                      local: bool = False) -> tuple[LoadSeries, int]:
    """Keep the first row for every timestamp (in file order after a stable sort).

    Returns the deduplicated series and the number of dropped rows.
    """
    return rows_to_series(raw_rows, country_code, timezone_id, local=local)


def remove_outliers(series: LoadSeries, multiplier: float = 4.5) -> tuple[LoadSeries, OutlierReport]:
    """Mark values more than ``multiplier`` standard deviations from their
    (year, month) mean as missing.

    Statistics use the non-missing values of each calendar month (sample
    std, ddof=1); months with fewer than two values are left alone.
    """
    if not multiplier > 0:
        raise ValueError("multiplier must be > 0")
    index = series.index
    _, group = np.unique(index.year * 12 + index.month, return_inverse=True)
    v = series.values
    mu = np.full(len(v), np.nan)
    sd = np.full(len(v), np.nan)
    flag = np.zeros(len(v), dtype=bool)
    for g in range(group.max() + 1 if len(v) else 0):
        members = np.flatnonzero((group == g) & ~series.missing_mask)
        x = v[members]
        if len(x) < 2 or x.min() == x.max():      # too few values, or a constant month: nothing to reject
            continue
        mu[members], sd[members] = x.mean(), x.std(ddof=1)
        flag[members] = np.abs(x - x.mean()) > multiplier * x.std(ddof=1)
    idx = np.flatnonzero(flag)
    removed = [(series.index[i], float(v[i]), float(mu[i]), float(sd[i])) for i in idx]
    new_values = v.copy()
    new_values[idx] = np.nan
    out = series.with_values(new_values, series.missing_mask | flag)
    return out, OutlierReport(series.country_code, removed, multiplier)


def _zone(timezone_id: str) -> ZoneInfo:
    try:
        return ZoneInfo(timezone_id)
    except (ZoneInfoNotFoundError, ValueError) as exc:
        raise DataError(f"unknown timezone {timezone_id!r}") from exc


def convert_to_local(series: LoadSeries) -> LoadSeries:
    """Re-label a UTC series on the local wall-clock hourly index.

    At a fall-back transition the two UTC hours sharing one local hour are
    averaged; at spring-forward the skipped local hour becomes missing.
    """
    if series.local:
        raise DataError(f"{series.country_code}: series is already local")
    tz = _zone(series.timezone_id)
    if len(series) == 0:
        return series.with_values(series.values, series.missing_mask, local=True,
                                  start=series.start.tz_localize(None))
    wall = series.index.tz_convert(tz).tz_localize(None)
    grouped = pd.Series(series.values, index=wall).groupby(level=0).mean()
    dense = pd.date_range(grouped.index[0], grouped.index[-1], freq="h")
    values = grouped.reindex(dense).to_numpy()
    return series.with_values(values, np.isnan(values), local=True, start=dense[0])


def blend_weight(d, a: float = 0.3):
    """Weight of the linear-interpolation suggestion at distance ``d`` samples."""
    return np.exp(-a * np.asarray(d, dtype=np.float64))


def blend(d, linear, historical, a: float = 0.3):
    w = blend_weight(d, a)
    return w * linear + (1.0 - w) * historical


def historical_suggestion(values: np.ndarray, idx: np.ndarray, history_weeks: int = 4) -> np.ndarray:
    """Historical estimate for positions ``idx`` of a dense local hourly array.

    Mean of the same hour and weekday over the previous ``history_weeks``
    weeks; falls back to the same hour over the previous 7 days, then to the
    mean of the whole series. Only originally present values are used.
    """
    idx = np.asarray(idx, dtype=np.int64)
    out = np.full(len(idx), np.nan)

    def lagged_mean(lags: np.ndarray, todo: np.ndarray) -> np.ndarray:
        pos = idx[todo, None] - lags[None, :]
        ok = pos >= 0
        vals = np.where(ok, values[np.where(ok, pos, 0)], np.nan)
        n = np.sum(~np.isnan(vals), axis=1)
        sums = np.nansum(vals, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(n > 0, sums / np.maximum(n, 1), np.nan)

    todo = np.arange(len(idx))
    out[todo] = lagged_mean(168 * np.arange(1, history_weeks + 1), todo)
    todo = np.flatnonzero(np.isnan(out))
    if len(todo):
        out[todo] = lagged_mean(24 * np.arange(1, 8), todo)
    todo = np.isnan(out)
    if todo.any():
        out[todo] = np.nanmean(values)
    return out


def impute(series: LoadSeries, params: ImputationParams = ImputationParams()) -> tuple[LoadSeries, int]:
    """Fill every missing sample with the distance-weighted blend of linear
    interpolation and the historical suggestion.

    ``w = exp(-a d)`` where ``d`` is the distance to the nearest present
    sample; gaps open on one side use the historical suggestion alone.
    """
    v = series.values
    miss = series.missing_mask
    n = len(v)
    if n == 0 or miss.all():
        raise DataError(f"{series.country_code}: cannot impute an entirely missing series")
    missing = np.flatnonzero(miss)
    if len(missing) == 0:
        return series, 0

    pos = np.arange(n)
    prev = np.maximum.accumulate(np.where(miss, -1, pos))
    nxt = np.minimum.accumulate(np.where(miss, n, pos)[::-1])[::-1]
    p, q = prev[missing], nxt[missing]
    has_p, has_q = p >= 0, q < n
    dist = np.minimum(np.where(has_p, missing - p, n), np.where(has_q, q - missing, n))

    H = historical_suggestion(v, missing, params.history_weeks)
    both = has_p & has_q
    L = np.full(len(missing), np.nan)
    pp, qq = p[both], q[both]
    frac = (missing[both] - pp) / (qq - pp)
    L[both] = v[pp] + frac * (v[qq] - v[pp])
    r = np.where(both, blend(dist, np.where(both, L, 0.0), H, params.a), H)

    out = v.copy()
    out[missing] = r
    return series.with_values(out, np.zeros(n, bool)), len(missing)


def imputation_log_rows(before: LoadSeries, after: LoadSeries) -> list[tuple]:
    idx = np.flatnonzero(before.missing_mask & ~after.missing_mask)
    stamps = before.index
    return [(stamps[i], "", "imputed", f"value={after.values[i]!r}") for i in idx]


def write_log(rows, path: str | Path) -> None:
    """Write ``timestamp,original,action,detail`` rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for ts, orig, action, detail in rows:
            w.writerow([pd.Timestamp(ts).isoformat(), "" if orig == "" else repr(float(orig)), action, detail])


@dataclass
class WranglingSummary:
    country_code: str
    duplicates_dropped: int = 0
    outliers: OutlierReport | None = None
    imputed: int = 0
    log_rows: list = field(default_factory=list)

    @property
    def n_outliers(self) -> int:
        return 0 if self.outliers is None else len(self.outliers)


def wrangle(series: LoadSeries, multiplier: float = 4.5,
            params: ImputationParams = ImputationParams()) -> tuple[LoadSeries, WranglingSummary]:
    """Run the four curation steps on one UTC series."""
    summary = WranglingSummary(series.country_code)
    if series.raw_rows is not None:
        series, summary.duplicates_dropped = remove_duplicates(
            series.raw_rows, series.country_code, series.timezone_id)
    series, report = remove_outliers(series, multiplier)
    summary.outliers = report
    summary.log_rows.extend(report.log_rows())
    local = convert_to_local(series)
    filled, summary.imputed = impute(local, params)
    summary.log_rows.extend(imputation_log_rows(local, filled))
    log.info("%s: %d duplicates, %d outliers, %d imputed", series.country_code,
             summary.duplicates_dropped, summary.n_outliers, summary.imputed)
    return filled, summary
