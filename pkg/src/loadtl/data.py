"""Core time-series types, hourly load CSV I/O, synthetic datasets and splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .seeds import rng_for

HOUR = pd.Timedelta(hours=1)
CSV_HEADER = ("timestamp", "load_mw")
MANIFEST_HEADER = ("code", "display_name", "timezone_id", "csv_path")


class DataError(ValueError):
    """Malformed or inconsistent load data."""


class ParseError(DataError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LoadSeries:
    """One country's hourly demand on a dense hourly index.

    ``start`` is a tz-aware UTC timestamp until the series is localized;
    afterwards it is a naive local wall-clock timestamp and ``local`` is set.
    Missing samples hold NaN in ``values`` and True in ``missing_mask``.
    """

    country_code: str
    timezone_id: str
    start: pd.Timestamp
    values: np.ndarray
    missing_mask: np.ndarray
    local: bool = False
    raw_rows: pd.DataFrame | None = field(default=None, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        mask = np.asarray(self.missing_mask, dtype=bool)
        if values.shape != mask.shape or values.ndim != 1:
            raise DataError("values and missing_mask must be 1-D and equally long")
        values = np.where(mask, np.nan, values)
        present = values[~mask]
        if not np.all(np.isfinite(present)):
            raise DataError(f"{self.country_code}: non-finite value not marked missing")
        if np.any(present < 0):
            raise DataError(f"{self.country_code}: negative load value")
        start = pd.Timestamp(self.start)
        if self.local:
            if start.tzinfo is not None:
                raise DataError("a localized series has a naive wall-clock start")
        else:
            start = start.tz_localize("UTC") if start.tzinfo is None else start.tz_convert("UTC")
        if start != start.floor("h"):
            raise DataError(f"start {start} is not hour-aligned")
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "missing_mask", _frozen(mask))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def end(self) -> pd.Timestamp:
        """Exclusive end of the index."""
        return self.start + len(self) * HOUR

    @property
    def index(self) -> pd.DatetimeIndex:
        return pd.date_range(self.start, periods=len(self), freq="h")

    @property
    def n_missing(self) -> int:
        return int(self.missing_mask.sum())

    def to_pandas(self) -> pd.Series:
        return pd.Series(self.values, index=self.index, name=self.country_code)

    def with_values(self, values: np.ndarray, missing_mask: np.ndarray | None = None, **changes) -> "LoadSeries":
        values = np.asarray(values, dtype=np.float64)
        if missing_mask is None:
            missing_mask = np.isnan(values)
        return replace(self, values=values, missing_mask=missing_mask, raw_rows=None, **changes)

    def slice_time(self, start: pd.Timestamp, stop: pd.Timestamp) -> "LoadSeries":
        """Sub-series covering ``[start, stop)`` intersected with the index."""
        i0 = max(0, self.position(start))
        i1 = min(len(self), self.position(stop))
        i1 = max(i0, i1)
        return replace(
            self,
            start=self.start + i0 * HOUR,
            values=self.values[i0:i1],
            missing_mask=self.missing_mask[i0:i1],
            raw_rows=None,
        )

    def position(self, t: pd.Timestamp) -> int:
        """Index position of instant ``t`` (may fall outside ``[0, len)``)."""
        t = self._coerce(t)
        return int((t - self.start) // HOUR)

    def _coerce(self, t) -> pd.Timestamp:
        t = pd.Timestamp(t)
        if self.local:
            return t.tz_localize(None) if t.tzinfo is not None else t
        return t.tz_localize("UTC") if t.tzinfo is None else t.tz_convert("UTC")


@dataclass(frozen=True)
class CountryMeta:
    code: str
    display_name: str
    timezone_id: str
    cluster_id: int | None = None


@dataclass(frozen=True)
class SplitSpec:
    """Calendar boundaries: train is ``[.., train_end)``, val ``[train_end, val_end)``,
    test ``[val_end, test_end)``. Boundaries are local wall-clock instants."""

    train_end: pd.Timestamp
    val_end: pd.Timestamp
    test_end: pd.Timestamp

    def __post_init__(self):
        ts = [pd.Timestamp(t).tz_localize(None) if pd.Timestamp(t).tzinfo else pd.Timestamp(t)
              for t in (self.train_end, self.val_end, self.test_end)]
        if not ts[0] < ts[1] < ts[2]:
            raise ValueError("split boundaries must satisfy train_end < val_end < test_end")
        object.__setattr__(self, "train_end", ts[0])
        object.__setattr__(self, "val_end", ts[1])
        object.__setattr__(self, "test_end", ts[2])

    @classmethod
    def yearly(cls, val_year: int, test_years: int = 1) -> "SplitSpec":
        """Validation on ``val_year``, test on the following ``test_years`` years."""
        return cls(
            pd.Timestamp(year=val_year, month=1, day=1),
            pd.Timestamp(year=val_year + 1, month=1, day=1),
            pd.Timestamp(year=val_year + 1 + test_years, month=1, day=1),
        )


@dataclass(frozen=True)
class Dataset:
    series: Mapping[str, LoadSeries]
    splits: SplitSpec
    meta: Mapping[str, CountryMeta] = field(default_factory=dict)
    labels: Mapping[str, str] = field(default_factory=dict)  # planted family per country (synthetic only)

    @property
    def codes(self) -> list[str]:
        return list(self.series)

    def replace_series(self, series: Mapping[str, LoadSeries]) -> "Dataset":
        return replace(self, series=dict(series))


# ---------------------------------------------------------------------------
# CSV ingestion


def _parse_rows(path: Path, local: bool) -> pd.DataFrame:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
        raise ParseError(f"{path}: expected header {','.join(CSV_HEADER)}, got {header}")

    stamps: list[pd.Timestamp] = []
    values: list[float] = []
    for i, row in enumerate(rows, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise ParseError(f"expected 2 fields, got {len(row)}", i)
        ts_text, val_text = row[0].strip(), row[1].strip()
        try:
            ts = pd.Timestamp(ts_text)
        except (ValueError, TypeError) as exc:
            raise ParseError(f"unparseable timestamp {ts_text!r}", i) from exc
        if ts is pd.NaT:
            raise ParseError(f"unparseable timestamp {ts_text!r}", i)
        if local:
            if ts.tzinfo is not None:
                raise ParseError("localized files carry naive wall-clock timestamps", i)
        else:
            if ts.tzinfo is None:
                raise ParseError(f"timestamp {ts_text!r} lacks a UTC offset", i)
            ts = ts.tz_convert("UTC")
        if ts != ts.floor("h"):
            raise ParseError(f"timestamp {ts_text!r} is not hour-aligned", i)
        if val_text == "":
            v = math.nan
        else:
            try:
                v = float(val_text)
            except ValueError as exc:
                raise ParseError(f"unparseable value {val_text!r}", i) from exc
            if not math.isfinite(v) or v < 0:
                raise ParseError(f"invalid load value {val_text!r}", i)
        stamps.append(ts)
        values.append(v)
    if not stamps:
        raise ParseError(f"{path}: no parseable rows")
    return pd.DataFrame({"timestamp": stamps, "load_mw": np.array(values, dtype=np.float64)})


def rows_to_series(raw_rows: pd.DataFrame, country_code: str, timezone_id: str,
                   local: bool = False) -> tuple[LoadSeries, int]:
    """Place timestamped rows on a dense hourly index, keeping the first row per hour.

    Returns the series and the number of dropped duplicate rows.
    """
    if len(raw_rows) == 0:
        start = pd.Timestamp("1970-01-01") if local else pd.Timestamp("1970-01-01", tz="UTC")
        return LoadSeries(country_code, timezone_id, start, np.empty(0), np.empty(0, bool), local), 0
    rows = raw_rows.sort_values("timestamp", kind="stable")
    kept = rows.drop_duplicates(subset="timestamp", keep="first")
    dropped = len(rows) - len(kept)
    start, stop = kept["timestamp"].iloc[0], kept["timestamp"].iloc[-1]
    n = int((stop - start) // HOUR) + 1
    pos = ((kept["timestamp"] - start) // HOUR).to_numpy(dtype=np.int64)
    values = np.full(n, np.nan)
    values[pos] = kept["load_mw"].to_numpy()
    series = LoadSeries(country_code, timezone_id, start, values, np.isnan(values), local=local)
    return series, dropped


def parse_load_csv(path: str | Path, meta: CountryMeta, local: bool = False) -> LoadSeries:
    """Read a ``timestamp,load_mw`` file into a canonical dense hourly series.

    Absent hours and empty value fields become missing. Every parsed row,
    duplicates included, is kept on ``raw_rows`` for duplicate resolution.
    """
    raw = _parse_rows(Path(path), local)
    series, _ = rows_to_series(raw, meta.code, meta.timezone_id, local=local)
    return replace(series, raw_rows=raw)


def _format_value(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def write_load_csv(series: LoadSeries, path: str | Path) -> None:
    """Write a series; UTC series carry ``+00:00`` offsets, localized ones naive wall-clock stamps."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for ts, v in zip(series.index, series.values):
            w.writerow([ts.isoformat(), _format_value(v)])


def read_manifest(path: str | Path) -> list[tuple[CountryMeta, Path]]:
    """Parse a ``code,display_name,timezone_id,csv_path`` manifest.

    Relative csv paths resolve against the manifest's directory.
    """
    path = Path(path)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if tuple(df.columns) != MANIFEST_HEADER:
        raise ParseError(f"{path}: expected header {','.join(MANIFEST_HEADER)}")
    if df["code"].duplicated().any():
        raise DataError(f"{path}: duplicate country codes")
    out = []
    for _, r in df.iterrows():
        csv_path = Path(r["csv_path"])
        if not csv_path.is_absolute():
            csv_path = path.parent / csv_path
        out.append((CountryMeta(r["code"], r["display_name"], r["timezone_id"]), csv_path))
    return out


def write_manifest(entries: Sequence[tuple[CountryMeta, Path]], path: str | Path) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for meta, p in entries:
            w.writerow([meta.code, meta.display_name, meta.timezone_id, str(p)])


def load_dataset(manifest: str | Path, splits: SplitSpec, local: bool = False) -> Dataset:
    entries = read_manifest(manifest)
    series = {m.code: parse_load_csv(p, m, local=local) for m, p in entries}
    return Dataset(series, splits, meta={m.code: m for m, _ in entries})


# ---------------------------------------------------------------------------
# Splitting


def split_series(series: LoadSeries, splits: SplitSpec) -> tuple[LoadSeries, LoadSeries, LoadSeries]:
    """Cut a series into train/val/test partitions at the split boundaries.

    A series that begins after the nominal start simply gets a shorter train
    partition; boundaries outside the series' range are an error.
    """
    if series.position(splits.train_end) <= 0:
        raise DataError(f"{series.country_code}: train partition is empty "
                        f"(series starts {series.start}, train_end {splits.train_end})")
    if series.position(splits.test_end) > len(series):
        raise DataError(f"{series.country_code}: test_end {splits.test_end} beyond series end {series.end}")
    train = series.slice_time(series.start, splits.train_end)
    val = series.slice_time(splits.train_end, splits.val_end)
    test = series.slice_time(splits.val_end, splits.test_end)
    return train, val, test


# ---------------------------------------------------------------------------
# Synthetic data


def _fourier(phase: np.ndarray, coeffs: Sequence[tuple[float, float]]) -> np.ndarray:
    out = np.zeros_like(phase, dtype=np.float64)
    for k, (a, b) in enumerate(coeffs, start=1):
        out += a * np.cos(2 * np.pi * k * phase) + b * np.sin(2 * np.pi * k * phase)
    return out


@dataclass(frozen=True)
class ProfileFamily:
    """Generator parameters shared by the countries of one planted family.

    Each shape is a truncated Fourier series given as ``(cos, sin)`` pairs per
    harmonic, evaluated on hour-of-day (period 24), weekday (period 7, Monday
    = 0) and month (period 12, January = 0).
    """

    name: str
    daily: tuple[tuple[float, float], ...]
    weekly: tuple[tuple[float, float], ...] = ()
    yearly: tuple[tuple[float, float], ...] = ()
    amp_daily: float = 0.0
    amp_weekly: float = 0.0
    amp_yearly: float = 0.0
    noise: float = 0.0          # Gaussian noise std, relative to the country's base
    base_range: tuple[float, float] = (1_000.0, 50_000.0)

    def d(self, hour) -> np.ndarray:
        return _fourier(np.asarray(hour, dtype=float) / 24.0, self.daily)

    def w(self, dow) -> np.ndarray:
        return _fourier(np.asarray(dow, dtype=float) / 7.0, self.weekly)

    def y(self, month0) -> np.ndarray:
        return _fourier(np.asarray(month0, dtype=float) / 12.0, self.yearly)

    def min_multiplier(self) -> float:
        return float(1.0
                     + np.min(self.amp_daily * self.d(np.arange(24)))
                     + np.min(self.amp_weekly * self.w(np.arange(7)))
                     + np.min(self.amp_yearly * self.y(np.arange(12))))

    def validate(self) -> None:
        if self.noise < 0:
            raise ValueError(f"family {self.name}: noise must be >= 0")
        lo, hi = self.base_range
        if not 0 < lo <= hi:
            raise ValueError(f"family {self.name}: invalid base_range {self.base_range}")
        if self.min_multiplier() <= 0:
            raise ValueError(f"family {self.name}: amplitudes force non-positive loads")


def two_family_presets(noise: float = 0.02) -> list[ProfileFamily]:
    """Two clearly separable families: a winter-peaking continental shape with
    morning and evening peaks, and a summer-peaking southern shape with an
    afternoon peak."""
    north = ProfileFamily(
        name="north",
        daily=((-0.55, -0.25), (-0.35, 0.10), (0.05, 0.08)),
        weekly=((0.25, -0.30), (0.15, 0.10)),
        yearly=((0.8, 0.1), (0.15, 0.0)),
        amp_daily=0.18, amp_weekly=0.12, amp_yearly=0.18, noise=noise,
    )
    south = ProfileFamily(
        name="south",
        daily=((-0.70, 0.05), (0.10, -0.20), (-0.05, 0.02)),
        weekly=((0.10, -0.12), (0.05, 0.05)),
        yearly=((-0.2, 0.0), (0.7, 0.15)),
        amp_daily=0.25, amp_weekly=0.06, amp_yearly=0.12, noise=noise,
    )
    return [north, south]


def synthesize_dataset(seed: int, families: Sequence[ProfileFamily], countries_per_family: int = 3,
                       years: int = 3, start_year: int = 2019) -> Dataset:
    """Generate a multi-country dataset with planted profile families.

    Country load is ``base * (1 + A_d d(hour) + A_w w(weekday) + A_y y(month))``
    plus Gaussian noise with std ``noise * base``. Series are on a UTC
    timebase (zone ``UTC``), so localization is the identity. The last two
    years are validation and test.
    """
    if not families:
        raise ValueError("at least one family required")
    if years < 2:
        raise ValueError("years must be >= 2")
    if countries_per_family < 1:
        raise ValueError("countries_per_family must be >= 1")
    for fam in families:
        fam.validate()

    start = pd.Timestamp(year=start_year, month=1, day=1, tz="UTC")
    stop = pd.Timestamp(year=start_year + years, month=1, day=1, tz="UTC")
    idx = pd.date_range(start, stop, freq="h", inclusive="left")
    hour, dow, month0 = idx.hour.to_numpy(), idx.dayofweek.to_numpy(), idx.month.to_numpy() - 1

    series: dict[str, LoadSeries] = {}
    meta: dict[str, CountryMeta] = {}
    labels: dict[str, str] = {}
    for fi, fam in enumerate(families):
        shape = (1.0 + fam.amp_daily * fam.d(hour) + fam.amp_weekly * fam.w(dow)
                 + fam.amp_yearly * fam.y(month0))
        for ci in range(countries_per_family):
            code = chr(ord("A") + fi % 26) + chr(ord("A") + ci % 26)
            rng = rng_for(seed, f"country/{fi}", ci)
            lo, hi = fam.base_range
            base = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
            load = base * shape
            if fam.noise > 0:
                load = load + rng.normal(0.0, fam.noise * base, size=len(idx))
            load = np.maximum(load, 0.0)
            series[code] = LoadSeries(code, "UTC", start, load, np.zeros(len(idx), bool))
            meta[code] = CountryMeta(code, f"{fam.name}-{ci}", "UTC")
            labels[code] = fam.name
    splits = SplitSpec.yearly(start_year + years - 2)
    return Dataset(series, splits, meta=meta, labels=labels)
