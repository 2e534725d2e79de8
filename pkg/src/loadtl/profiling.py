"""Average load profiles, normalized profile vectors and Ward clustering."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import LoadSeries

WEEKDAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
MONTHS = ("Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec")


@dataclass(frozen=True)
class LoadProfiles:
    daily: np.ndarray    # 24, by local hour
    weekly: np.ndarray   # 7, Monday first
    yearly: np.ndarray   # 12, January first


@dataclass(frozen=True)
class ProfileVector:
    country_code: str
    components: np.ndarray

    @property
    def daily(self):
        return self.components[:24]

    @property
    def weekly(self):
        return self.components[24:31]

    @property
    def yearly(self):
        return self.components[31:43]


def _bucket_means(values: np.ndarray, keys: np.ndarray, n: int, name: str) -> np.ndarray:
    ok = ~np.isnan(values)
    counts = np.bincount(keys[ok], minlength=n)
    if np.any(counts == 0):
        empty = int(np.flatnonzero(counts == 0)[0])
        raise ValueError(f"empty {name} bucket {empty}")
    return np.bincount(keys[ok], weights=values[ok], minlength=n) / counts


def compute_profiles(series: LoadSeries) -> LoadProfiles:
    """Mean load by hour of day, weekday and month on the series' own clock."""
    idx = series.index
    v = series.values
    return LoadProfiles(
        daily=_bucket_means(v, idx.hour.to_numpy(), 24, "hour"),
        weekly=_bucket_means(v, idx.dayofweek.to_numpy(), 7, "weekday"),
        yearly=_bucket_means(v, idx.month.to_numpy() - 1, 12, "month"),
    )


def minmax(x: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; a constant vector maps to all 0.5."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.full_like(x, 0.5)
    return (x - lo) / (hi - lo)


def build_profile_vector(profiles: LoadProfiles, country_code: str = "") -> ProfileVector:
    comps = np.concatenate([minmax(profiles.daily), minmax(profiles.weekly), minmax(profiles.yearly)])
    return ProfileVector(country_code, comps)


# ---------------------------------------------------------------------------
# Ward clustering


@dataclass(frozen=True)
class Merge:
    a: int
    b: int
    distance: float
    size: int


@dataclass(frozen=True)
class Dendrogram:
    """Merge steps in scipy's convention: leaves are ``0..n-1`` and the cluster
    created at step ``s`` gets id ``n + s``. ``distance`` is the Ward height
    ``sqrt(2 n_a n_b / (n_a + n_b)) * ||c_a - c_b||``."""

    labels: tuple[str, ...]
    merges: tuple[Merge, ...]

    @property
    def n(self) -> int:
        return len(self.labels)

    def leaf_order(self) -> list[int]:
        if self.n == 1:
            return [0]
        children = {self.n + s: (m.a, m.b) for s, m in enumerate(self.merges)}
        order, stack = [], [self.n + len(self.merges) - 1]
        while stack:
            c = stack.pop()
            if c < self.n:
                order.append(c)
            else:
                a, b = children[c]
                stack.extend((b, a))
        return order

    def as_linkage(self) -> np.ndarray:
        return np.array([[m.a, m.b, m.distance, m.size] for m in self.merges], dtype=np.float64)


def ward_linkage(X: np.ndarray) -> list[Merge]:
    """Agglomerative Ward clustering with the Lance-Williams update on squared
    Euclidean distances. Ties go to the pair with the smallest (min id, max id)."""
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if n < 1:
        raise ValueError("need at least one observation")
    diff = X[:, None, :] - X[None, :, :]
    D = np.full((2 * n - 1, 2 * n - 1), np.inf)
    D[:n, :n] = np.einsum("ijk,ijk->ij", diff, diff)
    size = np.zeros(2 * n - 1, dtype=np.int64)
    size[:n] = 1
    active = list(range(n))
    merges = []
    for step in range(n - 1):
        best = None
        for ii, i in enumerate(active):
            for j in active[ii + 1:]:
                key = (D[i, j], min(i, j), max(i, j))
                if best is None or key < best:
                    best = key
        d, i, j = best
        new = n + step
        ni, nj = size[i], size[j]
        active = [c for c in active if c not in (i, j)]
        for k in active:
            nk = size[k]
            val = ((ni + nk) * D[i, k] + (nj + nk) * D[j, k] - nk * d) / (ni + nj + nk)
            D[k, new] = D[new, k] = max(val, 0.0)
        active.append(new)
        size[new] = ni + nj
        merges.append(Merge(i, j, float(np.sqrt(max(d, 0.0))), int(ni + nj)))
    return merges


def ward_dendrogram(vectors: Sequence[ProfileVector]) -> Dendrogram:
    codes = [v.country_code for v in vectors]
    if len(set(codes)) != len(codes):
        raise ValueError("duplicate country codes")
    if len(vectors) < 2:
        raise ValueError("need at least two vectors")
    X = np.stack([v.components for v in vectors])
    return Dendrogram(tuple(codes), tuple(ward_linkage(X)))


@dataclass(frozen=True)
class ClusterAssignment:
    k: int
    mapping: Mapping[str, int]

    def members(self, cluster_id: int) -> list[str]:
        return sorted(c for c, k in self.mapping.items() if k == cluster_id)

    def cluster_of(self, code: str) -> int:
        return self.mapping[code]


def cut_clusters(dendrogram: Dendrogram, k: int) -> ClusterAssignment:
    """Undo the last ``k - 1`` merges; ids 1..k ordered by smallest member code."""
    n = dendrogram.n
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    for s, m in enumerate(dendrogram.merges[: n - k]):
        members[n + s] = members.pop(m.a) + members.pop(m.b)
    groups = sorted((sorted(dendrogram.labels[i] for i in g) for g in members.values()),
                    key=lambda g: g[0])
    mapping = {code: cid for cid, g in enumerate(groups, start=1) for code in g}
    return ClusterAssignment(k, dict(sorted(mapping.items())))


def cluster_countries(series: Mapping[str, LoadSeries], k: int = 4):
    """Profiles -> vectors -> Ward dendrogram -> k clusters, for a whole dataset."""
    vectors = [build_profile_vector(compute_profiles(s), code) for code, s in series.items()]
    dendro = ward_dendrogram(vectors)
    return vectors, dendro, cut_clusters(dendro, k)


# ---------------------------------------------------------------------------
# Exports


def _writer(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fh = open(path, "w", newline="", encoding="utf-8")
    return fh, csv.writer(fh, lineterminator="\n")


def write_dendrogram(dendrogram: Dendrogram, path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(["step", "cluster_a", "cluster_b", "distance", "size", "label_a", "label_b"])
        n = dendrogram.n
        for s, m in enumerate(dendrogram.merges):
            la = dendrogram.labels[m.a] if m.a < n else ""
            lb = dendrogram.labels[m.b] if m.b < n else ""
            w.writerow([s, m.a, m.b, repr(m.distance), m.size, la, lb])


def write_assignment(assignment: ClusterAssignment, path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(["country", "cluster"])
        for code, cid in assignment.mapping.items():
            w.writerow([code, cid])


def read_assignment(path) -> ClusterAssignment:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    mapping = {r["country"]: int(r["cluster"]) for r in rows}
    return ClusterAssignment(len(set(mapping.values())), mapping)


def write_profiles(profiles: Mapping[str, LoadProfiles], out_dir) -> dict[str, Path]:
    """One wide CSV per profile type, one row per country."""
    out_dir = Path(out_dir)
    paths = {}
    for kind, cols in (("daily", [f"h{h:02d}" for h in range(24)]),
                       ("weekly", list(WEEKDAYS)), ("yearly", list(MONTHS))):
        path = out_dir / f"profile_{kind}.csv"
        fh, w = _writer(path)
        with fh:
            w.writerow(["country"] + cols)
            for code, p in profiles.items():
                w.writerow([code] + [repr(float(x)) for x in getattr(p, kind)])
        paths[kind] = path
    return paths
